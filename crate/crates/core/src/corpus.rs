//! Features, instances, tokenization and the JSONL corpus format.
//!
//! A corpus line looks like
//!
//! ```text
//! {"id": "i1", "text": "red door cafe is cheap .", "features": [{"attr": "name", "value": "red_door_cafe"}]}
//! ```
//!
//! Texts are lowercased and tokenized on load; the raw text is kept for display.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Characters split off the edges of a whitespace-delimited word.
pub const PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '\'', '"', '(', ')'];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty input text")]
    EmptyText,
    #[error("invalid feature {key:?}: {reason}")]
    InvalidFeature { key: String, reason: &'static str },
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An `attribute=value` pair. Ordering and equality are byte-wise on the
/// canonical key.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Feature {
    key: String,
    split: usize,
}

impl Feature {
    pub fn new(attribute: &str, value: &str) -> Result<Self, CorpusError> {
        let key = format!("{attribute}={value}");
        let invalid = |reason| CorpusError::InvalidFeature { key: key.clone(), reason };
        if attribute.is_empty() {
            return Err(invalid("empty attribute"));
        }
        if value.is_empty() {
            return Err(invalid("empty value"));
        }
        if attribute.contains('=') {
            return Err(invalid("'=' in attribute"));
        }
        if key.contains('\n') || key.contains('\r') {
            return Err(invalid("newline in feature"));
        }
        Ok(Feature { split: attribute.len(), key })
    }

    /// Parses a canonical `attribute=value` key, splitting at the first `=`.
    pub fn parse(key: &str) -> Result<Self, CorpusError> {
        match key.split_once('=') {
            Some((attribute, value)) => Feature::new(attribute, value),
            None => Err(CorpusError::InvalidFeature { key: key.to_string(), reason: "missing '='" }),
        }
    }

    pub fn attribute(&self) -> &str {
        &self.key[..self.split]
    }

    pub fn value(&self) -> &str {
        &self.key[self.split + 1..]
    }

    pub fn key(&self) -> &str {
        &self.key
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

impl fmt::Debug for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Feature({})", self.key)
    }
}

impl std::str::FromStr for Feature {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::parse(s)
    }
}

impl Serialize for Feature {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.key)
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let key = String::deserialize(deserializer)?;
        Feature::parse(&key).map_err(serde::de::Error::custom)
    }
}

/// A collection of concepts: a set of features kept in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureCollection(BTreeSet<Feature>);

impl FeatureCollection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the feature was already present.
    pub fn insert(&mut self, feature: Feature) -> bool {
        self.0.insert(feature)
    }

    pub fn contains(&self, feature: &Feature) -> bool {
        self.0.contains(feature)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Feature> + '_ {
        self.0.iter()
    }

    /// Distinct attribute names, sorted.
    pub fn attributes(&self) -> BTreeSet<&str> {
        self.0.iter().map(Feature::attribute).collect()
    }

    pub fn extend(&mut self, other: &FeatureCollection) {
        self.0.extend(other.0.iter().cloned());
    }

    /// Parses a comma-separated list of `attr=value` keys.
    pub fn parse_list(list: &str) -> Result<Self, CorpusError> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(Feature::parse).collect()
    }
}

impl FromIterator<Feature> for FeatureCollection {
    fn from_iter<I: IntoIterator<Item = Feature>>(iter: I) -> Self {
        FeatureCollection(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a FeatureCollection {
    type Item = &'a Feature;
    type IntoIter = std::collections::btree_set::Iter<'a, Feature>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for FeatureCollection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let keys: Vec<&str> = self.0.iter().map(Feature::key).collect();
        write!(f, "{{{}}}", keys.join(", "))
    }
}

/// A single lowercase token without internal whitespace.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Lowercases, splits on whitespace and peels punctuation off word edges.
/// Internal punctuation (`w-sw`, `it's`) stays inside the word.
pub fn tokenize(text: &str) -> Result<Vec<Token>, CorpusError> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lower.split_whitespace() {
        let mut rest = word;
        while let Some(c) = rest.chars().next().filter(|c| PUNCTUATION.contains(c)) {
            tokens.push(Token(c.to_string()));
            rest = &rest[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next_back().filter(|c| PUNCTUATION.contains(c)) {
            trailing.push(Token(c.to_string()));
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        if !rest.is_empty() {
            tokens.push(Token(rest.to_string()));
        }
        tokens.extend(trailing.into_iter().rev());
    }
    if tokens.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    Ok(tokens)
}

/// Joins tokens with single spaces.
pub fn join_tokens(tokens: &[Token]) -> String {
    let words: Vec<&str> = tokens.iter().map(Token::as_str).collect();
    words.join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    /// Raw text as read, kept for display.
    pub text: String,
    pub tokens: Vec<Token>,
    pub cc: FeatureCollection,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, cc: FeatureCollection) -> Result<Self, CorpusError> {
        let text = text.into();
        let tokens = tokenize(&text)?;
        Ok(Instance { id: id.into(), text, tokens, cc })
    }

    /// The tokenized text joined by single spaces.
    pub fn joined(&self) -> String {
        join_tokens(&self.tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    instances: Vec<Instance>,
    feature_universe: Vec<Feature>,
}

impl Corpus {
    pub fn new(instances: Vec<Instance>) -> Result<Self, CorpusError> {
        if instances.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut ids = HashSet::new();
        let mut seen = HashSet::new();
        let mut feature_universe = Vec::new();
        for (i, instance) in instances.iter().enumerate() {
            if !ids.insert(instance.id.as_str()) {
                return Err(CorpusError::Validation { line: i + 1, message: format!("duplicate id {:?}", instance.id) });
            }
            if instance.tokens.is_empty() {
                return Err(CorpusError::Validation { line: i + 1, message: "empty text".into() });
            }
            for feature in &instance.cc {
                if seen.insert(feature) {
                    feature_universe.push(feature.clone());
                }
            }
        }
        Ok(Corpus { instances, feature_universe })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Every feature of every CC, in first-occurrence order.
    pub fn feature_universe(&self) -> &[Feature] {
        &self.feature_universe
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn from_jsonl(input: &str) -> Result<Self, CorpusError> {
        read_jsonl(input.as_bytes())
    }

    /// Canonical serialization: one line per instance, features in key order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for instance in &self.instances {
            let record = RecordOut {
                id: &instance.id,
                text: &instance.text,
                features: instance.cc.iter().map(|f| FeatureOut { attr: f.attribute(), value: f.value() }).collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("corpus record serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

#[derive(Deserialize)]
struct RecordIn {
    id: String,
    text: String,
    #[serde(default)]
    features: Vec<FeatureIn>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct FeatureIn {
    attr: String,
    value: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    text: &'a str,
    features: Vec<FeatureOut<'a>>,
}

#[derive(Serialize)]
struct FeatureOut<'a> {
    attr: &'a str,
    value: &'a str,
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RecordIn = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: line_no, source })?;
        for key in record.extra.keys() {
            log::warn!("line {line_no}: ignoring unknown key {key:?}");
        }
        let validation = |message: String| CorpusError::Validation { line: line_no, message };
        let mut cc = FeatureCollection::new();
        for f in &record.features {
            let feature = Feature::new(&f.attr, &f.value).map_err(|e| validation(e.to_string()))?;
            if !cc.insert(feature) {
                return Err(validation(format!("duplicate feature {}={}", f.attr, f.value)));
            }
        }
        if !ids.insert(record.id.clone()) {
            return Err(validation(format!("duplicate id {:?}", record.id)));
        }
        let instance = Instance::new(record.id, record.text, cc).map_err(|e| validation(e.to_string()))?;
        instances.push(instance);
    }
    Corpus::new(instances)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path)?;
    read_jsonl(BufReader::new(file))
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(corpus.to_jsonl().as_bytes())?;
    Ok(())
}
