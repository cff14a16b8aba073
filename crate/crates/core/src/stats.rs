//! Instance-level co-occurrence counts between fragment strings and features.
//!
//! Counting is binary per instance: a text containing a fragment twice, or a
//! CC listing a feature once, contributes one instance either way.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::corpus::{join_tokens, Corpus, Feature};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("fragment {0:?} does not occur in the corpus")]
    UnknownFragment(String),
    #[error("feature {0} does not occur in the corpus")]
    UnknownFeature(String),
}

/// Raw counts behind the conditional probabilities of one (fragment, feature) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    /// Corpus size.
    pub total: usize,
    /// Instances whose text contains the fragment.
    pub fragment: usize,
    /// Instances whose CC contains the feature.
    pub feature: usize,
    /// Instances with both.
    pub joint: usize,
}

impl PairCounts {
    pub fn p_feature(&self) -> f64 {
        self.feature as f64 / self.total as f64
    }

    pub fn p_feature_given_fragment(&self) -> f64 {
        if self.fragment == 0 {
            0.0
        } else {
            self.joint as f64 / self.fragment as f64
        }
    }

    pub fn p_fragment_given_feature(&self) -> f64 {
        if self.feature == 0 {
            0.0
        } else {
            self.joint as f64 / self.feature as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct CooccurrenceTable {
    total: usize,
    max_len: Option<usize>,
    features: HashMap<Feature, Vec<u32>>,
    fragments: HashMap<String, Vec<u32>>,
}

const EMPTY: &[u32] = &[];

impl CooccurrenceTable {
    /// Records the instance sets of every feature and of every fragment string
    /// up to `max_len` tokens (`None` for no cap).
    pub fn build(corpus: &Corpus, max_len: Option<usize>) -> Self {
        let mut features: HashMap<Feature, Vec<u32>> = HashMap::new();
        let mut fragments: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, instance) in corpus.instances().iter().enumerate() {
            let id = i as u32;
            for feature in &instance.cc {
                features.entry(feature.clone()).or_default().push(id);
            }
            let n = instance.tokens.len();
            let cap = max_len.unwrap_or(n).min(n);
            let mut seen = HashSet::new();
            for start in 0..n {
                for end in start + 1..=(start + cap).min(n) {
                    let key = join_tokens(&instance.tokens[start..end]);
                    if seen.insert(key.clone()) {
                        fragments.entry(key).or_default().push(id);
                    }
                }
            }
        }
        CooccurrenceTable { total: corpus.len(), max_len, features, fragments }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn max_len(&self) -> Option<usize> {
        self.max_len
    }

    /// Sorted corpus positions of the instances whose CC holds `g`.
    pub fn feature_instances(&self, g: &Feature) -> &[u32] {
        self.features.get(g).map_or(EMPTY, Vec::as_slice)
    }

    /// Sorted corpus positions of the instances whose text contains `w`.
    pub fn fragment_instances(&self, w: &str) -> &[u32] {
        self.fragments.get(w).map_or(EMPTY, Vec::as_slice)
    }

    pub fn contains_fragment(&self, w: &str) -> bool {
        self.fragments.contains_key(w)
    }

    pub fn distinct_fragments(&self) -> usize {
        self.fragments.len()
    }

    pub fn counts(&self, w: &str, g: &Feature) -> PairCounts {
        let fragment = self.fragment_instances(w);
        let feature = self.feature_instances(g);
        PairCounts {
            total: self.total,
            fragment: fragment.len(),
            feature: feature.len(),
            joint: intersection_len(fragment, feature),
        }
    }

    /// P(g): share of instances whose CC holds `g`; 0 for unknown features.
    pub fn p_feature(&self, g: &Feature) -> f64 {
        self.feature_instances(g).len() as f64 / self.total as f64
    }

    /// P(g|w). The fragment must occur somewhere in the corpus.
    pub fn p_feature_given_fragment(&self, g: &Feature, w: &str) -> Result<f64, StatsError> {
        if !self.contains_fragment(w) {
            return Err(StatsError::UnknownFragment(w.to_string()));
        }
        Ok(self.counts(w, g).p_feature_given_fragment())
    }

    /// P(w|g). The feature must occur somewhere in the corpus; absent fragments give 0.
    pub fn p_fragment_given_feature(&self, w: &str, g: &Feature) -> Result<f64, StatsError> {
        if self.feature_instances(g).is_empty() {
            return Err(StatsError::UnknownFeature(g.to_string()));
        }
        Ok(self.counts(w, g).p_fragment_given_feature())
    }
}

fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}
