//! Schemata and the datasets distilled from an aligned corpus.
//!
//! Each aligned text becomes a sequence of placeholders (one per
//! feature-bearing segment, naming its attributes) and literal token strings
//! (the segments aligned to nothing). The text's full CC is paired with its
//! schema; every placeholder's fragment is paired with the features its
//! segment was aligned to.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignedInstance;
use crate::corpus::{Corpus, FeatureCollection};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("placeholder without attributes")]
    EmptyPlaceholder,
    #[error("schema has {expected} placeholders but {got} fillers were given")]
    Arity { expected: usize, got: usize },
    #[error("aligned corpus and corpus disagree at position {0}")]
    Mismatch(usize),
    #[error("bad slot key {0:?}, expected \"schema:position\"")]
    BadSlotKey(String),
}

/// Attribute names a schema position expresses, kept sorted and distinct.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Placeholder(Vec<String>);

impl Placeholder {
    pub fn new<I, S>(attributes: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = attributes.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(SchemaError::EmptyPlaceholder);
        }
        Ok(Placeholder(set.into_iter().collect()))
    }

    pub fn attributes(&self) -> &[String] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for Placeholder {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let attributes = Vec::<String>::deserialize(deserializer)?;
        Placeholder::new(attributes).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemaElement {
    #[serde(rename = "ph")]
    Placeholder(Placeholder),
    #[serde(rename = "lit")]
    Literal(String),
}

/// Equality is element-wise over the whole sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub elements: Vec<SchemaElement>,
}

impl Schema {
    pub fn new(elements: Vec<SchemaElement>) -> Self {
        Schema { elements }
    }

    /// Element positions holding placeholders, in order.
    pub fn placeholder_positions(&self) -> Vec<usize> {
        self.elements.iter().enumerate().filter(|(_, e)| matches!(e, SchemaElement::Placeholder(_))).map(|(i, _)| i).collect()
    }

    pub fn placeholder(&self, position: usize) -> Option<&Placeholder> {
        match self.elements.get(position) {
            Some(SchemaElement::Placeholder(p)) => Some(p),
            _ => None,
        }
    }

    /// Union of all placeholder attributes.
    pub fn attributes(&self) -> BTreeSet<&str> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                SchemaElement::Placeholder(p) => Some(p.attributes().iter().map(String::as_str)),
                SchemaElement::Literal(_) => None,
            })
            .flatten()
            .collect()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .elements
            .iter()
            .map(|e| match e {
                SchemaElement::Placeholder(p) => format!("[{}]", p.attributes().join(",")),
                SchemaElement::Literal(text) => format!("{text:?}"),
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// A placeholder's training pair: the fragment text and the features it expressed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FragmentRecord {
    pub text: String,
    pub cc: FeatureCollection,
}

/// One placeholder of one aligned text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaceholderFill {
    pub position: usize,
    pub record: FragmentRecord,
}

/// Converts a segmented text into its schema plus the fragment behind each placeholder.
pub fn to_schema(aligned: &AlignedInstance) -> (Schema, Vec<PlaceholderFill>) {
    let mut elements = Vec::with_capacity(aligned.segments.len());
    let mut fills = Vec::new();
    for (position, segment) in aligned.segments.iter().enumerate() {
        let text = aligned.segment_text(segment);
        if segment.features.is_empty() {
            elements.push(SchemaElement::Literal(text));
        } else {
            let placeholder = Placeholder::new(segment.features.attributes()).expect("segment has features");
            elements.push(SchemaElement::Placeholder(placeholder));
            fills.push(PlaceholderFill { position, record: FragmentRecord { text, cc: segment.features.clone() } });
        }
    }
    (Schema::new(elements), fills)
}

/// Replaces placeholders by `fillers` in order and joins everything with single spaces.
pub fn fill<S: AsRef<str>>(schema: &Schema, fillers: &[S]) -> Result<String, SchemaError> {
    let expected = schema.placeholder_positions().len();
    if expected != fillers.len() {
        return Err(SchemaError::Arity { expected, got: fillers.len() });
    }
    let mut next = fillers.iter();
    let parts: Vec<&str> = schema
        .elements
        .iter()
        .map(|e| match e {
            SchemaElement::Literal(text) => text.as_str(),
            SchemaElement::Placeholder(_) => next.next().expect("arity checked").as_ref(),
        })
        .collect();
    Ok(parts.join(" "))
}

/// Identifies one placeholder: the schema it belongs to and its element position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotKey {
    pub schema: usize,
    pub position: usize,
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.schema, self.position)
    }
}

impl std::str::FromStr for SlotKey {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SchemaError::BadSlotKey(s.to_string());
        let (schema, position) = s.split_once(':').ok_or_else(bad)?;
        Ok(SlotKey { schema: schema.trim().parse().map_err(|_| bad())?, position: position.trim().parse().map_err(|_| bad())? })
    }
}

impl Serialize for SlotKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A distinct schema with the CCs of the texts that produced it
/// (multiplicity kept: one CC per text).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub id: usize,
    pub elements: Schema,
    pub ccs: Vec<FeatureCollection>,
}

/// The schema dataset and every fragment dataset of a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Datasets {
    /// Distinct schemata in first-occurrence order; `id` equals the index.
    pub schemata: Vec<SchemaEntry>,
    /// For every text, in corpus order, the index of its schema.
    pub assignments: Vec<usize>,
    /// Fragment records per placeholder, ordered by (schema, position).
    pub fragments: IndexMap<SlotKey, Vec<FragmentRecord>>,
}

impl Datasets {
    /// The schema dataset as `(schema id, CC)` records in corpus order.
    pub fn schema_records(&self) -> Vec<(usize, &FeatureCollection)> {
        let mut taken = vec![0usize; self.schemata.len()];
        self.assignments
            .iter()
            .map(|&s| {
                let cc = &self.schemata[s].ccs[taken[s]];
                taken[s] += 1;
                (s, cc)
            })
            .collect()
    }
}

/// Builds the schema dataset and the fragment datasets. `corpus` supplies the
/// full CC of each aligned text and must list the same instances in the same order.
pub fn build_datasets(corpus: &Corpus, aligned: &[AlignedInstance]) -> Result<Datasets, SchemaError> {
    if corpus.len() != aligned.len() {
        return Err(SchemaError::Mismatch(corpus.len().min(aligned.len())));
    }
    let mut datasets = Datasets::default();
    let mut lookup: HashMap<Schema, usize> = HashMap::new();
    let mut slots: Vec<(SlotKey, FragmentRecord)> = Vec::new();
    for (i, (instance, aligned)) in corpus.instances().iter().zip(aligned).enumerate() {
        if instance.id != aligned.id {
            return Err(SchemaError::Mismatch(i));
        }
        let (schema, fills) = to_schema(aligned);
        let id = *lookup.entry(schema.clone()).or_insert_with(|| {
            datasets.schemata.push(SchemaEntry { id: datasets.schemata.len(), elements: schema, ccs: Vec::new() });
            datasets.schemata.len() - 1
        });
        datasets.schemata[id].ccs.push(instance.cc.clone());
        datasets.assignments.push(id);
        slots.extend(fills.into_iter().map(|f| (SlotKey { schema: id, position: f.position }, f.record)));
    }
    slots.sort_by_key(|(key, _)| *key); // stable: corpus order within a slot
    for (key, record) in slots {
        datasets.fragments.entry(key).or_default().push(record);
    }
    Ok(datasets)
}
