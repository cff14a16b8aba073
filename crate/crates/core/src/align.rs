//! Fragment-to-feature alignment.
//!
//! For a feature `g` every fragment `w` of a text is scored with
//!
//! ```text
//! Express(w,g) = (P(g|w) - P(g)) / (1 - P(g))   if P(g|w) > P(g) and P(g) < 1, else 0
//! Core(w,g)    = P(w|g)
//! weight(w,g)  = Express(w,g) * Core(w,g)
//! ```
//!
//! Fragments whose weight is at least that of every neighbour are maxima.
//! Maxima below `sigma` are dropped, the rest are grouped into connected
//! regions of the triangle and the longest fragment of each region is
//! aligned to `g`. Overlapping alignments of different features are merged
//! into their union and the text is cut at the surviving borders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{join_tokens, Corpus, Feature, FeatureCollection, Instance, Token};
use crate::lattice::{Neighbourhood, Span, TriangleIndex};
use crate::stats::{CooccurrenceTable, PairCounts, StatsError};

pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("sigma must lie in [0, 1], got {0}")]
    InvalidSigma(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub sigma: f64,
    /// Longest fragment counted by the statistics; `None` means unlimited.
    pub max_len: Option<usize>,
    pub neighbourhood: Neighbourhood,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { sigma: DEFAULT_SIGMA, max_len: None, neighbourhood: Neighbourhood::Comparable }
    }
}

impl AlignConfig {
    pub fn new(sigma: f64) -> Result<Self, AlignError> {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(AlignError::InvalidSigma(sigma));
        }
        Ok(AlignConfig { sigma, ..Default::default() })
    }
}

/// Which score to compute over a triangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Express,
    Core,
    Weight,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "express" => Ok(Metric::Express),
            "core" => Ok(Metric::Core),
            "weight" => Ok(Metric::Weight),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// Express as an exact fraction: (joint*total - feature*fragment) / (fragment*(total - feature)).
fn express_ratio(c: &PairCounts) -> (u128, u128) {
    let (joint, total, feature, fragment) = (c.joint as u128, c.total as u128, c.feature as u128, c.fragment as u128);
    // P(g|w) <= P(g)  <=>  joint * total <= feature * fragment
    if fragment == 0 || feature == total || joint * total <= feature * fragment {
        return (0, 1);
    }
    (joint * total - feature * fragment, fragment * (total - feature))
}

/// Each score is formed as one integer ratio and divided once, so equal
/// fractions give identical floats and thresholds like 0.5 compare exactly.
fn score_counts(c: &PairCounts, metric: Metric) -> f64 {
    let ratio = |(num, den): (u128, u128)| if num == 0 { 0.0 } else { num as f64 / den as f64 };
    let core = (c.joint as u128, c.feature.max(1) as u128);
    match metric {
        Metric::Express => ratio(express_ratio(c)),
        Metric::Core => ratio(core),
        Metric::Weight => {
            let (num, den) = express_ratio(c);
            ratio((num * core.0, den * core.1))
        }
    }
}

/// Express(w,g). `w` must occur in the corpus.
pub fn express(w: &str, g: &Feature, table: &CooccurrenceTable) -> Result<f64, StatsError> {
    if !table.contains_fragment(w) {
        return Err(StatsError::UnknownFragment(w.to_string()));
    }
    Ok(score_counts(&table.counts(w, g), Metric::Express))
}

/// Core(w,g) = P(w|g); 0 for fragments absent from the corpus.
pub fn core(w: &str, g: &Feature, table: &CooccurrenceTable) -> Result<f64, StatsError> {
    table.p_fragment_given_feature(w, g)
}

pub fn weight(w: &str, g: &Feature, table: &CooccurrenceTable) -> Result<f64, StatsError> {
    core(w, g, table)?;
    express(w, g, table)?;
    Ok(score_counts(&table.counts(w, g), Metric::Weight))
}

/// Scores every fragment of `tokens` against `g`, in [`TriangleIndex`] order.
/// Fragments longer than the table's cap score 0.
pub fn score_fragments(tokens: &[Token], g: &Feature, table: &CooccurrenceTable, metric: Metric) -> Vec<f64> {
    let index = TriangleIndex::new(tokens.len());
    index.spans().map(|span| score_counts(&table.counts(&join_tokens(&tokens[span.start..span.end]), g), metric)).collect()
}

/// Marks the fragments whose score is `>=` that of every neighbour.
pub fn maxima(scores: &[f64], index: TriangleIndex, mode: Neighbourhood) -> Vec<bool> {
    debug_assert_eq!(scores.len(), index.len());
    match mode {
        Neighbourhood::Comparable => comparable_maxima(scores, index),
        Neighbourhood::Immediate => index
            .spans()
            .map(|span| {
                let own = scores[index.index(span)];
                adjacent_spans(span, index.tokens()).all(|other| own >= scores[index.index(other)])
            })
            .collect(),
    }
}

fn comparable_maxima(scores: &[f64], index: TriangleIndex) -> Vec<bool> {
    let n = index.tokens();
    let at = |s: usize, e: usize| scores[index.index(Span::new(s, e))];
    // sup[s][e]: best score over spans containing [s,e), itself included.
    // sub[s][e]: best score over spans inside [s,e), itself included.
    let mut sup = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    let mut sub = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    for len in (1..=n).rev() {
        for s in 0..=n - len {
            let e = s + len;
            let mut best = at(s, e);
            if s > 0 {
                best = best.max(sup[s - 1][e]);
            }
            if e < n {
                best = best.max(sup[s][e + 1]);
            }
            sup[s][e] = best;
        }
    }
    for len in 1..=n {
        for s in 0..=n - len {
            let e = s + len;
            let mut best = at(s, e);
            if len > 1 {
                best = best.max(sub[s + 1][e]).max(sub[s][e - 1]);
            }
            sub[s][e] = best;
        }
    }
    index
        .spans()
        .map(|span| {
            let (s, e) = (span.start, span.end);
            let own = at(s, e);
            let mut rival = f64::NEG_INFINITY;
            if s > 0 {
                rival = rival.max(sup[s - 1][e]);
            }
            if e < n {
                rival = rival.max(sup[s][e + 1]);
            }
            if e - s > 1 {
                rival = rival.max(sub[s + 1][e]).max(sub[s][e - 1]);
            }
            own >= rival
        })
        .collect()
}

fn adjacent_spans(span: Span, n: usize) -> impl Iterator<Item = Span> {
    let (s, e) = (span.start, span.end);
    let candidates = [
        (e - s > 1).then(|| Span::new(s, e - 1)),
        (e - s > 1).then(|| Span::new(s + 1, e)),
        (s > 0).then(|| Span::new(s - 1, e)),
        (e < n).then(|| Span::new(s, e + 1)),
    ];
    candidates.into_iter().flatten()
}

/// Groups the selected spans into regions connected by triangle edges and
/// returns the longest span of each region (leftmost on ties), by start.
fn longest_per_region(selected: &[bool], scores: &[f64], index: TriangleIndex) -> Vec<Span> {
    let mut visited = vec![false; selected.len()];
    let mut chosen = Vec::new();
    for seed in 0..selected.len() {
        if !selected[seed] || visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut stack = vec![seed];
        let mut best = index.span(seed);
        while let Some(current) = stack.pop() {
            let span = index.span(current);
            if span.len() > best.len() || (span.len() == best.len() && span.start < best.start) {
                best = span;
            }
            for next in adjacent_spans(span, index.tokens()) {
                let j = index.index(next);
                if selected[j] && !visited[j] {
                    // adjacent maxima are neighbours of each other, so they tie
                    debug_assert_eq!(scores[j], scores[current], "unequal maxima in one region");
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        chosen.push(best);
    }
    chosen.sort();
    chosen
}

/// Spans of `instance` aligned to `g`; possibly several, possibly none.
pub fn align_feature(instance: &Instance, g: &Feature, table: &CooccurrenceTable, config: &AlignConfig) -> Vec<Span> {
    let index = TriangleIndex::new(instance.tokens.len());
    let scores = score_fragments(&instance.tokens, g, table, Metric::Weight);
    let is_max = maxima(&scores, index, config.neighbourhood);
    let selected: Vec<bool> = is_max.iter().zip(&scores).map(|(&m, &w)| m && w >= config.sigma).collect();
    longest_per_region(&selected, &scores, index)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSegment {
    #[serde(flatten)]
    pub span: Span,
    pub features: FeatureCollection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedInstance {
    pub id: String,
    pub tokens: Vec<Token>,
    pub segments: Vec<AlignedSegment>,
}

impl AlignedInstance {
    pub fn segment_text(&self, segment: &AlignedSegment) -> String {
        join_tokens(&self.tokens[segment.span.start..segment.span.end])
    }

    /// `(span, feature)` pairs of every feature-bearing segment.
    pub fn links(&self) -> impl Iterator<Item = (Span, &Feature)> + '_ {
        self.segments.iter().flat_map(|s| s.features.iter().map(move |f| (s.span, f)))
    }
}

/// Replaces overlapping spans with their union until none overlap; the union
/// carries the features of everything it absorbed.
pub fn merge_overlapping(mut aligned: Vec<(Span, FeatureCollection)>) -> Vec<(Span, FeatureCollection)> {
    aligned.sort_by_key(|a| a.0);
    let mut merged: Vec<(Span, FeatureCollection)> = Vec::with_capacity(aligned.len());
    for (span, features) in aligned {
        match merged.last_mut() {
            Some((last, fs)) if last.overlaps(&span) => {
                *last = last.union(&span);
                fs.extend(&features);
            }
            _ => merged.push((span, features)),
        }
    }
    merged
}

/// Cuts `n` tokens at the borders of non-overlapping spans; gaps become
/// segments without features.
pub fn segment(n: usize, aligned: Vec<(Span, FeatureCollection)>) -> Vec<AlignedSegment> {
    let mut segments = Vec::new();
    let mut cursor = 0;
    for (span, features) in aligned {
        if span.start > cursor {
            segments.push(AlignedSegment { span: Span::new(cursor, span.start), features: FeatureCollection::new() });
        }
        cursor = span.end;
        segments.push(AlignedSegment { span, features });
    }
    if cursor < n {
        segments.push(AlignedSegment { span: Span::new(cursor, n), features: FeatureCollection::new() });
    }
    segments
}

pub fn align_instance(instance: &Instance, table: &CooccurrenceTable, config: &AlignConfig) -> AlignedInstance {
    let mut aligned = Vec::new();
    for g in &instance.cc {
        for span in align_feature(instance, g, table, config) {
            aligned.push((span, [g.clone()].into_iter().collect()));
        }
    }
    let unaligned: Vec<&Feature> =
        instance.cc.iter().filter(|g| !aligned.iter().any(|(_, fs): &(Span, FeatureCollection)| fs.contains(g))).collect();
    if !unaligned.is_empty() {
        log::debug!("{}: no fragment clears sigma for {:?}", instance.id, unaligned);
    }
    AlignedInstance {
        id: instance.id.clone(),
        tokens: instance.tokens.clone(),
        segments: segment(instance.tokens.len(), merge_overlapping(aligned)),
    }
}

/// Builds the statistics once and aligns every instance, in corpus order.
pub fn align_corpus(corpus: &Corpus, config: &AlignConfig) -> Vec<AlignedInstance> {
    let table = CooccurrenceTable::build(corpus, config.max_len);
    align_with_table(corpus, &table, config)
}

pub fn align_with_table(corpus: &Corpus, table: &CooccurrenceTable, config: &AlignConfig) -> Vec<AlignedInstance> {
    corpus.instances().par_iter().map(|instance| align_instance(instance, table, config)).collect()
}

pub fn to_jsonl(aligned: &[AlignedInstance]) -> String {
    let mut out = String::new();
    for instance in aligned {
        out.push_str(&serde_json::to_string(instance).expect("aligned instance serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(input: &str) -> Result<Vec<AlignedInstance>, serde_json::Error> {
    input.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_fragments;
    use crate::stats::tests::{c4, random_corpus};
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    fn f(key: &str) -> Feature {
        Feature::parse(key).unwrap()
    }

    fn texts(instance: &Instance, spans: &[Span]) -> Vec<String> {
        spans.iter().map(|s| join_tokens(&instance.tokens[s.start..s.end])).collect()
    }

    #[test]
    fn c4_scores() {
        let table = CooccurrenceTable::build(&c4(), None);
        let rdc = f("name=red_door_cafe");
        let cheap = f("price=cheap");
        assert_eq!(express("cheap", &cheap, &table).unwrap(), 1.0);
        assert!((express("door cafe", &rdc, &table).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(core("red door cafe", &rdc, &table).unwrap(), 1.0);
        assert_eq!(core("red door cafe is", &rdc, &table).unwrap(), 0.5);
        assert_eq!(core("absent", &rdc, &table).unwrap(), 0.0);
        assert_eq!(weight("cheap", &cheap, &table).unwrap(), 1.0);
        assert!((weight("door cafe", &rdc, &table).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // "." occurs everywhere: P(g|w) = P(g)
        assert_eq!(weight(".", &rdc, &table).unwrap(), 0.0);
        assert!(express("absent", &rdc, &table).is_err());
    }

    #[test]
    fn feature_in_every_instance_expresses_nothing() {
        let corpus = Corpus::from_jsonl(
            "{\"id\":\"a\",\"text\":\"x y\",\"features\":[{\"attr\":\"k\",\"value\":\"v\"}]}\n\
             {\"id\":\"b\",\"text\":\"x z\",\"features\":[{\"attr\":\"k\",\"value\":\"v\"}]}\n",
        )
        .unwrap();
        let table = CooccurrenceTable::build(&corpus, None);
        for w in ["x", "y", "x y", "z"] {
            assert_eq!(express(w, &f("k=v"), &table).unwrap(), 0.0);
        }
    }

    #[test]
    fn c4_align_feature() {
        let corpus = c4();
        let table = CooccurrenceTable::build(&corpus, None);
        let config = AlignConfig::default();
        let i1 = &corpus.instances()[0];
        assert_eq!(texts(i1, &align_feature(i1, &f("name=red_door_cafe"), &table, &config)), ["red door cafe"]);
        assert_eq!(texts(i1, &align_feature(i1, &f("price=cheap"), &table, &config)), ["is cheap ."]);
        // features seen in a single instance pull in the whole text
        let i3 = &corpus.instances()[2];
        assert_eq!(texts(i3, &align_feature(i3, &f("food=sushi"), &table, &config)), ["red door cafe serves sushi ."]);
        assert_eq!(
            texts(i3, &align_feature(i3, &f("name=red_door_cafe"), &table, &config)),
            ["red door cafe", "door cafe serves sushi ."]
        );
    }

    #[test]
    fn c4_align_instances() {
        let corpus = c4();
        let aligned = align_corpus(&corpus, &AlignConfig::default());
        let summary: Vec<Vec<(String, String)>> =
            aligned.iter().map(|a| a.segments.iter().map(|s| (a.segment_text(s), s.features.to_string())).collect()).collect();
        let pair = |t: &str, fs: &str| (t.to_string(), fs.to_string());
        assert_eq!(summary[0], [pair("red door cafe", "{name=red_door_cafe}"), pair("is cheap .", "{price=cheap}")]);
        assert_eq!(summary[1], [pair("blue door cafe is cheap .", "{name=blue_door_cafe, price=cheap}")]);
        assert_eq!(summary[2], [pair("red door cafe serves sushi .", "{food=sushi, name=red_door_cafe}")]);
        assert_eq!(summary[3], [pair("sushi bar is cheap .", "{name=sushi_bar, price=cheap}")]);
    }

    #[test]
    fn fig10_two_fragments_for_one_feature() {
        // "san francisco" and "sfo" both realise to=san_francisco; every other
        // word shows up without the feature somewhere in the corpus.
        let rows = [
            ("a", "list flights from phoenix to san francisco , and arrive sfo before noon", "to=san_francisco,from=phoenix"),
            ("b", "list flights from phoenix to denver , and arrive before noon", "to=denver,from=phoenix"),
            ("c", "flights from denver to san francisco", "to=san_francisco,from=denver"),
            ("d", "arrive sfo", "to=san_francisco"),
            ("h", "san francisco flights", "to=san_francisco"),
            ("i", "sfo before noon", "to=san_francisco"),
            ("e", "list flights from denver to phoenix before noon", "to=phoenix,from=denver"),
            ("f", "to boston , and arrive before noon", "to=boston"),
            ("g", "list flights from boston to denver", "to=denver,from=boston"),
        ];
        let instances = rows
            .iter()
            .map(|(id, text, fs)| Instance::new(*id, *text, FeatureCollection::parse_list(fs).unwrap()).unwrap())
            .collect();
        let corpus = Corpus::new(instances).unwrap();
        let table = CooccurrenceTable::build(&corpus, None);
        let first = &corpus.instances()[0];
        let spans = align_feature(first, &f("to=san_francisco"), &table, &AlignConfig::default());
        assert_eq!(texts(first, &spans), ["san francisco", "sfo"]);
    }

    #[test]
    fn overlapping_alignments_merge() {
        let g1: FeatureCollection = [f("a1=g1")].into_iter().collect();
        let g2: FeatureCollection = [f("a2=g2")].into_iter().collect();
        let merged = merge_overlapping(vec![(Span::new(0, 5), g1), (Span::new(3, 6), g2)]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].0, Span::new(0, 6));
        assert_eq!(merged[0].1.to_string(), "{a1=g1, a2=g2}");
        let segments = segment(7, merged);
        assert_eq!(segments.len(), 2);
        assert_eq!(segments[1].span, Span::new(6, 7));
        assert!(segments[1].features.is_empty());
    }

    #[test]
    fn nothing_clears_sigma() {
        let corpus = c4();
        let table = CooccurrenceTable::build(&corpus, None);
        let strict = AlignConfig { sigma: 1.0, ..AlignConfig::default() };
        let relaxed = align_instance(&corpus.instances()[0], &table, &strict);
        assert_eq!(relaxed.segments.len(), 2);
        let impossible = Instance::new("i1", "red door cafe is cheap .", FeatureCollection::new()).unwrap();
        let out = align_instance(&impossible, &table, &AlignConfig::default());
        assert_eq!(out.segments.len(), 1);
        assert_eq!(out.segments[0].span, Span::new(0, 6));
        assert!(out.segments[0].features.is_empty());
    }

    #[test]
    fn sigma_range() {
        assert!(AlignConfig::new(0.5).is_ok());
        assert!(AlignConfig::new(0.0).is_ok());
        assert!(AlignConfig::new(1.0).is_ok());
        assert_eq!(AlignConfig::new(1.01), Err(AlignError::InvalidSigma(1.01)));
        assert!(AlignConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn single_instance_corpus_aligns_whole_text() {
        let corpus = Corpus::from_jsonl(
            "{\"id\":\"a\",\"text\":\"cheap sushi .\",\"features\":[{\"attr\":\"price\",\"value\":\"cheap\"}]}\n",
        )
        .unwrap();
        let table = CooccurrenceTable::build(&corpus, None);
        let inst = &corpus.instances()[0];
        // P(g) = 1, so every weight is 0 and nothing clears sigma
        let scores = score_fragments(&inst.tokens, &f("price=cheap"), &table, Metric::Weight);
        assert!(scores.iter().all(|&w| w == 0.0));
        assert!(align_feature(inst, &f("price=cheap"), &table, &AlignConfig::default()).is_empty());
    }

    #[test]
    fn aligned_jsonl_format() {
        let aligned = align_corpus(&c4(), &AlignConfig::default());
        let text = to_jsonl(&aligned);
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"id":"i1","tokens":["red","door","cafe","is","cheap","."],"segments":[{"start":0,"end":3,"features":["name=red_door_cafe"]},{"start":3,"end":6,"features":["price=cheap"]}]}"#
        );
        assert_eq!(from_jsonl(&text).unwrap(), aligned);
    }

    // ---- brute-force oracle, exact rational arithmetic ----

    /// weight as an exact fraction (num, den).
    fn oracle_weight(corpus: &Corpus, words: &[String], g: &Feature) -> (u128, u128) {
        let n = corpus.len() as u128;
        let has_w = |inst: &Instance| {
            let toks: Vec<&str> = inst.tokens.iter().map(Token::as_str).collect();
            toks.windows(words.len()).any(|win| win.iter().zip(words).all(|(a, b)| *a == b))
        };
        let frag = corpus.instances().iter().filter(|i| has_w(i)).count() as u128;
        let feat = corpus.instances().iter().filter(|i| i.cc.contains(g)).count() as u128;
        let joint = corpus.instances().iter().filter(|i| has_w(i) && i.cc.contains(g)).count() as u128;
        if frag == 0 || feat == 0 || feat == n || joint * n <= feat * frag {
            return (0, 1);
        }
        // ((joint/frag - feat/n) / (1 - feat/n)) * (joint/feat)
        let num = (joint * n - feat * frag) * joint;
        let den = frag * (n - feat) * feat;
        (num, den)
    }

    fn ge(a: (u128, u128), b: (u128, u128)) -> bool {
        a.0 * b.1 >= b.0 * a.1
    }

    fn oracle_align(corpus: &Corpus, inst: &Instance, g: &Feature) -> Vec<Span> {
        let n = inst.tokens.len();
        let spans: Vec<Span> = (0..n).flat_map(|s| (s + 1..=n).map(move |e| Span::new(s, e))).collect();
        let words = |s: &Span| inst.tokens[s.start..s.end].iter().map(|t| t.as_str().to_string()).collect::<Vec<_>>();
        let w: Vec<(u128, u128)> = spans.iter().map(|s| oracle_weight(corpus, &words(s), g)).collect();
        let comparable =
            |a: &Span, b: &Span| a != b && ((a.start <= b.start && b.end <= a.end) || (b.start <= a.start && a.end <= b.end));
        let keep: Vec<usize> = (0..spans.len())
            .filter(|&i| (0..spans.len()).all(|j| !comparable(&spans[i], &spans[j]) || ge(w[i], w[j])))
            .filter(|&i| ge(w[i], (1, 2)))
            .collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &i in &keep {
            if !seen.insert(i) {
                continue;
            }
            let mut component = vec![i];
            let mut k = 0;
            while k < component.len() {
                let a = spans[component[k]];
                for &j in &keep {
                    let b = spans[j];
                    if comparable(&a, &b) && a.len().abs_diff(b.len()) == 1 && seen.insert(j) {
                        component.push(j);
                    }
                }
                k += 1;
            }
            let best = component.iter().map(|&c| spans[c]).max_by_key(|s| (s.len(), std::cmp::Reverse(s.start))).unwrap();
            out.push(best);
        }
        out.sort();
        out
    }

    #[test]
    fn c4_matches_oracle() {
        let corpus = c4();
        let table = CooccurrenceTable::build(&corpus, None);
        for inst in corpus.instances() {
            for g in &inst.cc {
                assert_eq!(align_feature(inst, g, &table, &AlignConfig::default()), oracle_align(&corpus, inst, g));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn align_feature_matches_oracle(corpus in random_corpus()) {
            let table = CooccurrenceTable::build(&corpus, None);
            let config = AlignConfig::default();
            for inst in corpus.instances() {
                for g in corpus.feature_universe() {
                    prop_assert_eq!(align_feature(inst, g, &table, &config), oracle_align(&corpus, inst, g));
                }
            }
        }

        #[test]
        fn express_branches(corpus in random_corpus()) {
            let table = CooccurrenceTable::build(&corpus, None);
            for inst in corpus.instances() {
                for frag in enumerate_fragments(inst).fragments() {
                    let w = join_tokens(&inst.tokens[frag.span.start..frag.span.end]);
                    for g in corpus.feature_universe() {
                        let e = express(&w, g, &table).unwrap();
                        prop_assert!((0.0..=1.0).contains(&e));
                        let p_g = table.p_feature(g);
                        if table.p_feature_given_fragment(g, &w).unwrap() <= p_g || p_g == 1.0 {
                            prop_assert_eq!(e, 0.0);
                        }
                    }
                }
            }
        }

        #[test]
        fn segmentation_partitions_text(corpus in random_corpus(), sigma in 0.0f64..=1.0) {
            let config = AlignConfig { sigma, ..AlignConfig::default() };
            let table = CooccurrenceTable::build(&corpus, None);
            for (inst, aligned) in corpus.instances().iter().zip(align_with_table(&corpus, &table, &config)) {
                let mut cursor = 0;
                for seg in &aligned.segments {
                    prop_assert_eq!(seg.span.start, cursor);
                    cursor = seg.span.end;
                }
                prop_assert_eq!(cursor, inst.tokens.len());
                // every aligned feature had a fragment of weight >= sigma before merging
                for g in aligned.segments.iter().flat_map(|s| s.features.iter()) {
                    let spans = align_feature(inst, g, &table, &config);
                    prop_assert!(!spans.is_empty());
                    for s in spans {
                        let w = weight(&join_tokens(&inst.tokens[s.start..s.end]), g, &table).unwrap();
                        prop_assert!(w >= sigma);
                    }
                }
            }
        }

        #[test]
        fn merge_fixpoint_is_order_independent(
            raw in proptest::collection::vec((0usize..10, 1usize..4, 0u8..4), 0..8),
            seed in any::<u64>(),
        ) {
            let items: Vec<(Span, FeatureCollection)> = raw.iter().map(|&(s, l, a)| {
                (Span::new(s, s + l), [Feature::new(&format!("a{a}"), "v").unwrap()].into_iter().collect())
            }).collect();
            let expected = merge_overlapping(items.clone());
            // naive fixpoint: merge any overlapping pair, in a shuffled order
            let mut naive = items;
            let mut state = seed;
            loop {
                let pairs: Vec<(usize, usize)> = (0..naive.len())
                    .flat_map(|i| (i + 1..naive.len()).map(move |j| (i, j)))
                    .filter(|&(i, j)| naive[i].0.overlaps(&naive[j].0))
                    .collect();
                if pairs.is_empty() { break; }
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let (i, j) = pairs[(state >> 33) as usize % pairs.len()];
                let (span, fs) = naive.remove(j);
                naive[i].0 = naive[i].0.union(&span);
                naive[i].1.extend(&fs);
            }
            naive.sort_by_key(|a| a.0);
            prop_assert_eq!(naive, expected);
        }
    }

    #[test]
    fn immediate_neighbourhood_switch() {
        let corpus = c4();
        let table = CooccurrenceTable::build(&corpus, None);
        let config = AlignConfig { neighbourhood: Neighbourhood::Immediate, ..AlignConfig::default() };
        let i1 = &corpus.instances()[0];
        let spans = align_feature(i1, &f("name=red_door_cafe"), &table, &config);
        assert!(spans.contains(&Span::new(0, 3)));
        let all: BTreeSet<Span> = spans.into_iter().collect();
        assert!(all.iter().all(|s| s.end <= 6));
    }
}
