//! Least-squares selectors.
//!
//! A dataset of `N` records, each a candidate item paired with a CC, becomes
//! an `N x M` multi-hot design matrix `K` over the dataset's feature universe.
//! For every distinct item `i`, `s_i` marks the records deriving it and the
//! mapping vector is the minimum-norm least-squares solution
//! `p_i = pinv(K) s_i`. A query CC encoded as `k*` scores item `i` with the
//! selection weight `k* . p_i`.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Feature, FeatureCollection};

/// Singular values below this fraction of the largest are treated as zero.
pub const RCOND: f64 = 1e-10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectorError {
    #[error("empty training dataset")]
    Empty,
    #[error("no informative features")]
    NoInformativeFeatures,
    #[error("singular value decomposition failed: {0}")]
    Decomposition(String),
    #[error("malformed selector: {0}")]
    Malformed(String),
}

/// Column assignment of the features a selector was trained on.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureIndex {
    features: Vec<Feature>,
    lookup: HashMap<Feature, usize>,
}

impl FeatureIndex {
    /// Columns in first-occurrence order.
    pub fn from_ccs<'a>(ccs: impl IntoIterator<Item = &'a FeatureCollection>) -> Self {
        let mut index = FeatureIndex::default();
        for cc in ccs {
            for f in cc {
                if !index.lookup.contains_key(f) {
                    index.lookup.insert(f.clone(), index.features.len());
                    index.features.push(f.clone());
                }
            }
        }
        index
    }

    fn from_features(features: Vec<Feature>) -> Result<Self, SelectorError> {
        let mut lookup = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if lookup.insert(f.clone(), i).is_some() {
                return Err(SelectorError::Malformed(format!("feature {f} listed twice")));
            }
        }
        Ok(FeatureIndex { features, lookup })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn column(&self, f: &Feature) -> Option<usize> {
        self.lookup.get(f).copied()
    }

    /// Multi-hot encoding; features outside the index are dropped and counted.
    pub fn encode(&self, cc: &FeatureCollection) -> (FeatureVector, usize) {
        let mut v = vec![0.0; self.features.len()];
        let mut ignored = 0;
        for f in cc {
            match self.lookup.get(f) {
                Some(&col) => v[col] = 1.0,
                None => ignored += 1,
            }
        }
        (FeatureVector(v), ignored)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Item position (training order) and its raw selection weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub item: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel<T> {
    index: FeatureIndex,
    items: Vec<T>,
    /// One `M`-vector per item.
    mappings: Vec<Vec<f64>>,
}

impl<T: Clone + Eq + Hash> SelectorModel<T> {
    /// Solves `K p_i = s_i` for every distinct item. Identical items are
    /// collapsed into one candidate whose indicator covers all their records.
    pub fn train(records: &[(T, FeatureCollection)]) -> Result<Self, SelectorError> {
        if records.is_empty() {
            return Err(SelectorError::Empty);
        }
        let index = FeatureIndex::from_ccs(records.iter().map(|(_, cc)| cc));
        let mut items: Vec<T> = Vec::new();
        let mut item_of: HashMap<&T, usize> = HashMap::new();
        let rows: Vec<usize> = records
            .iter()
            .map(|(item, _)| {
                *item_of.entry(item).or_insert_with(|| {
                    items.push(item.clone());
                    items.len() - 1
                })
            })
            .collect();

        let (n, m) = (records.len(), index.len());
        if m == 0 {
            return Err(SelectorError::NoInformativeFeatures);
        }
        let design = DMatrix::from_fn(n, m, |r, c| if records[r].1.contains(&index.features[c]) { 1.0 } else { 0.0 });
        let indicators = DMatrix::from_fn(n, items.len(), |r, i| if rows[r] == i { 1.0 } else { 0.0 });

        let svd = design.svd(true, true);
        let largest = svd.singular_values.max();
        if largest <= 0.0 {
            return Err(SelectorError::NoInformativeFeatures);
        }
        let pinv = svd.pseudo_inverse(RCOND * largest).map_err(|e| SelectorError::Decomposition(e.to_string()))?;
        let solved = pinv * indicators;
        let mappings = (0..items.len()).map(|i| solved.column(i).iter().copied().collect()).collect();
        Ok(SelectorModel { index, items, mappings })
    }
}

impl<T> SelectorModel<T> {
    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn mappings(&self) -> &[Vec<f64>] {
        &self.mappings
    }

    pub fn encode(&self, cc: &FeatureCollection) -> (FeatureVector, usize) {
        self.index.encode(cc)
    }

    /// Raw weights `k* . p_i`, in item order. Not clipped.
    pub fn weights(&self, query: &FeatureVector) -> Vec<f64> {
        assert_eq!(query.dim(), self.index.len(), "query dimension");
        self.mappings.iter().map(|p| p.iter().zip(&query.0).map(|(a, b)| a * b).sum()).collect()
    }

    /// Items ranked by weight, descending; ties keep training order.
    pub fn select(&self, query: &FeatureVector, top_n: Option<usize>) -> Vec<Selection> {
        let mut ranked: Vec<Selection> =
            self.weights(query).into_iter().enumerate().map(|(item, weight)| Selection { item, weight }).collect();
        ranked.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.item.cmp(&b.item)));
        if let Some(n) = top_n {
            ranked.truncate(n);
        }
        ranked
    }
}

#[derive(Serialize, Deserialize)]
struct SelectorFile<T> {
    features: Vec<Feature>,
    items: Vec<T>,
    mappings: Vec<Vec<f64>>,
}

impl<T: Serialize> Serialize for SelectorModel<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View<'a, T> {
            features: &'a [Feature],
            items: &'a [T],
            mappings: &'a [Vec<f64>],
        }
        View { features: &self.index.features, items: &self.items, mappings: &self.mappings }.serialize(serializer)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for SelectorModel<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = SelectorFile::<T>::deserialize(deserializer)?;
        let bad = |msg: String| serde::de::Error::custom(SelectorError::Malformed(msg));
        if raw.mappings.len() != raw.items.len() {
            return Err(bad(format!("{} items but {} mapping vectors", raw.items.len(), raw.mappings.len())));
        }
        if let Some(p) = raw.mappings.iter().find(|p| p.len() != raw.features.len()) {
            return Err(bad(format!("mapping of length {} over {} features", p.len(), raw.features.len())));
        }
        let index = FeatureIndex::from_features(raw.features).map_err(|e| bad(e.to_string()))?;
        Ok(SelectorModel { index, items: raw.items, mappings: raw.mappings })
    }
}
