//! Trained models and their on-disk directory.
//!
//! A model directory holds plain JSON so that schemata and fragments can be
//! edited by hand:
//!
//! ```text
//! schemas.json    [{"id": 0, "elements": [{"ph": ["name"]}, {"lit": "is"}, ...], "ccs": [...]}, ...]
//! fragments.json  {"0:0": [{"text": "red door cafe", "cc": ["name=red_door_cafe"]}, ...], ...}
//! selectors.json  {"schema": {...}, "fragments": {"0:0": {...}, ...}}
//! aligned.jsonl   the segmented training texts
//! meta.json       configuration and digests
//! ```
//!
//! Selectors are always trained from the file representation of the
//! datasets, so `validate` on an untouched directory rewrites identical bytes.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{self, AlignConfig, AlignedInstance};
use crate::corpus::{Corpus, FeatureCollection};
use crate::schema::{build_datasets, FragmentRecord, SchemaElement, SchemaEntry, SchemaError, SlotKey};
use crate::selector::{SelectorError, SelectorModel};

pub const FORMAT_VERSION: u32 = 1;

pub const SCHEMAS_FILE: &str = "schemas.json";
pub const FRAGMENTS_FILE: &str = "fragments.json";
pub const SELECTORS_FILE: &str = "selectors.json";
pub const ALIGNED_FILE: &str = "aligned.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("{file} changed since the model was last validated; run `trg validate`")]
    Stale { file: &'static str },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("selector {name}: {source}")]
    Selector { name: String, source: SelectorError },
}

/// The trained selectors of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selectors {
    /// Items are schema ids.
    pub schema: SelectorModel<usize>,
    pub fragments: IndexMap<SlotKey, SelectorModel<FragmentRecord>>,
}

/// Everything generation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub schemata: Vec<SchemaEntry>,
    pub fragments: IndexMap<SlotKey, Vec<FragmentRecord>>,
    pub selectors: Selectors,
}

impl Model {
    /// Trains the schema selector on every (schema id, CC) pair and one
    /// fragment selector per placeholder dataset.
    pub fn train(schemata: Vec<SchemaEntry>, fragments: IndexMap<SlotKey, Vec<FragmentRecord>>) -> Result<Model, ModelError> {
        let records: Vec<(usize, FeatureCollection)> =
            schemata.iter().flat_map(|s| s.ccs.iter().map(move |cc| (s.id, cc.clone()))).collect();
        let schema = SelectorModel::train(&records).map_err(|source| ModelError::Selector { name: "schema".into(), source })?;
        let trained: Vec<(SlotKey, Result<SelectorModel<FragmentRecord>, SelectorError>)> = fragments
            .par_iter()
            .filter(|(_, records)| !records.is_empty())
            .map(|(key, records)| {
                let pairs: Vec<(FragmentRecord, FeatureCollection)> = records.iter().map(|r| (r.clone(), r.cc.clone())).collect();
                (*key, SelectorModel::train(&pairs))
            })
            .collect();
        let mut selectors = IndexMap::with_capacity(trained.len());
        for (key, result) in trained {
            let selector = result.map_err(|source| ModelError::Selector { name: key.to_string(), source })?;
            selectors.insert(key, selector);
        }
        Ok(Model { schemata, fragments, selectors: Selectors { schema, fragments: selectors } })
    }

    pub fn schema(&self, id: usize) -> Option<&SchemaEntry> {
        self.schemata.iter().find(|s| s.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub config: AlignConfig,
    pub instances: usize,
    pub corpus_digest: String,
    pub schemas_digest: String,
    pub fragments_digest: String,
}

/// A model together with its training configuration and aligned texts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDir {
    pub model: Model,
    pub meta: Meta,
    pub aligned: Vec<AlignedInstance>,
}

/// Problems `validate` reports without failing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
    /// True when the schema or fragment files differed from the recorded digests.
    pub edited: bool,
}

/// Runs the full pipeline: align, extract datasets, train selectors.
pub fn train_corpus(corpus: &Corpus, config: &AlignConfig) -> Result<ModelDir, ModelError> {
    let aligned = align::align_corpus(corpus, config);
    let datasets = build_datasets(corpus, &aligned)?;
    // round-trip through the file form so that training sees what `validate` will see
    let schemas_json = schemas_json(&datasets.schemata);
    let fragments_json = fragments_json(&datasets.fragments);
    let schemata: Vec<SchemaEntry> = serde_json::from_str(&schemas_json).expect("own output parses");
    let fragments: IndexMap<SlotKey, Vec<FragmentRecord>> = serde_json::from_str(&fragments_json).expect("own output parses");
    let model = Model::train(schemata, fragments)?;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        config: *config,
        instances: corpus.len(),
        corpus_digest: corpus.digest(),
        schemas_digest: sha256(schemas_json.as_bytes()),
        fragments_digest: sha256(fragments_json.as_bytes()),
    };
    Ok(ModelDir { model, meta, aligned })
}

impl ModelDir {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), ModelError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| ModelError::Io { path: dir.to_path_buf(), source })?;
        write_file(dir, SCHEMAS_FILE, &schemas_json(&self.model.schemata))?;
        write_file(dir, FRAGMENTS_FILE, &fragments_json(&self.model.fragments))?;
        write_file(dir, SELECTORS_FILE, &compact_json(&self.model.selectors))?;
        write_file(dir, ALIGNED_FILE, &align::to_jsonl(&self.aligned))?;
        write_file(dir, META_FILE, &to_json(&self.meta))?;
        Ok(())
    }

    /// Loads a model, refusing schema or fragment files edited after the last
    /// train or validate.
    pub fn load(dir: impl AsRef<Path>) -> Result<ModelDir, ModelError> {
        let dir = dir.as_ref();
        let meta: Meta = parse(dir, META_FILE, &read_file(dir, META_FILE)?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(ModelError::Version(meta.format_version));
        }
        let schemas_json = read_file(dir, SCHEMAS_FILE)?;
        if sha256(schemas_json.as_bytes()) != meta.schemas_digest {
            return Err(ModelError::Stale { file: SCHEMAS_FILE });
        }
        let fragments_json = read_file(dir, FRAGMENTS_FILE)?;
        if sha256(fragments_json.as_bytes()) != meta.fragments_digest {
            return Err(ModelError::Stale { file: FRAGMENTS_FILE });
        }
        let schemata: Vec<SchemaEntry> = parse(dir, SCHEMAS_FILE, &schemas_json)?;
        let fragments = parse(dir, FRAGMENTS_FILE, &fragments_json)?;
        let selectors = parse(dir, SELECTORS_FILE, &read_file(dir, SELECTORS_FILE)?)?;
        let aligned = read_aligned(dir)?;
        Ok(ModelDir { model: Model { schemata, fragments, selectors }, meta, aligned })
    }
}

/// Re-reads the hand-editable files, checks them, retrains every selector and
/// rewrites `selectors.json` and `meta.json`.
pub fn validate(dir: impl AsRef<Path>) -> Result<ValidationReport, ModelError> {
    let dir = dir.as_ref();
    let mut meta: Meta = parse(dir, META_FILE, &read_file(dir, META_FILE)?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(ModelError::Version(meta.format_version));
    }
    let schemas_json = read_file(dir, SCHEMAS_FILE)?;
    let fragments_json = read_file(dir, FRAGMENTS_FILE)?;
    let schemata: Vec<SchemaEntry> = parse(dir, SCHEMAS_FILE, &schemas_json)?;
    let fragments: IndexMap<SlotKey, Vec<FragmentRecord>> = parse(dir, FRAGMENTS_FILE, &fragments_json)?;
    read_aligned(dir)?;

    let report = ValidationReport {
        warnings: check(&schemata, &fragments)?,
        edited: sha256(schemas_json.as_bytes()) != meta.schemas_digest
            || sha256(fragments_json.as_bytes()) != meta.fragments_digest,
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let model = Model::train(schemata, fragments)?;
    meta.schemas_digest = sha256(schemas_json.as_bytes());
    meta.fragments_digest = sha256(fragments_json.as_bytes());
    write_file(dir, SELECTORS_FILE, &compact_json(&model.selectors))?;
    write_file(dir, META_FILE, &to_json(&meta))?;
    if report.edited {
        log::info!("hand edits detected; selectors retrained");
    }
    Ok(report)
}

/// Hard errors for inconsistent ids and placeholders, warnings for datasets
/// that can never be used or schemata that can never be completed.
fn check(schemata: &[SchemaEntry], fragments: &IndexMap<SlotKey, Vec<FragmentRecord>>) -> Result<Vec<String>, ModelError> {
    let mut warnings = Vec::new();
    let mut ids = HashSet::new();
    for s in schemata {
        if !ids.insert(s.id) {
            return Err(ModelError::Invalid(format!("schema id {} appears twice", s.id)));
        }
        if s.ccs.is_empty() {
            warnings.push(format!("schema {} has no training CCs and can never be selected", s.id));
        }
        for position in s.elements.placeholder_positions() {
            let key = SlotKey { schema: s.id, position };
            if fragments.get(&key).is_none_or(|r| r.is_empty()) {
                warnings.push(format!("placeholder {key} has no fragments; schema {} cannot be completed", s.id));
            }
        }
    }
    for (key, records) in fragments {
        let placeholder = schemata.iter().find(|s| s.id == key.schema).and_then(|s| s.elements.elements.get(key.position));
        match placeholder {
            Some(SchemaElement::Placeholder(_)) => {}
            _ => warnings.push(format!("fragment dataset {key} matches no placeholder and is ignored")),
        }
        if let Some(r) = records.iter().find(|r| r.text.trim().is_empty()) {
            return Err(ModelError::Invalid(format!("fragment dataset {key} has an empty text (cc {})", r.cc)));
        }
    }
    Ok(warnings)
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("model data serializes");
    s.push('\n');
    s
}

fn compact_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("model data serializes");
    s.push('\n');
    s
}

/// One schema per line, so that deleting a schema means deleting a line.
pub fn schemas_json(schemata: &[SchemaEntry]) -> String {
    let lines: Vec<String> =
        schemata.iter().map(|s| format!("  {}", serde_json::to_string(s).expect("schema serializes"))).collect();
    if lines.is_empty() {
        return "[]\n".into();
    }
    format!("[\n{}\n]\n", lines.join(",\n"))
}

/// One fragment record per line, grouped under their placeholder key.
pub fn fragments_json(fragments: &IndexMap<SlotKey, Vec<FragmentRecord>>) -> String {
    let groups: Vec<String> = fragments
        .iter()
        .map(|(key, records)| {
            let lines: Vec<String> =
                records.iter().map(|r| format!("    {}", serde_json::to_string(r).expect("record serializes"))).collect();
            if lines.is_empty() {
                format!("  \"{key}\": []")
            } else {
                format!("  \"{key}\": [\n{}\n  ]", lines.join(",\n"))
            }
        })
        .collect();
    if groups.is_empty() {
        return "{}\n".into();
    }
    format!("{{\n{}\n}}\n", groups.join(",\n"))
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_file(dir: &Path, name: &str) -> Result<String, ModelError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| ModelError::Io { path, source })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), ModelError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ModelError::Io { path, source })
}

fn parse<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str, text: &str) -> Result<T, ModelError> {
    serde_json::from_str(text).map_err(|source| ModelError::Json { path: dir.join(name), source })
}

fn read_aligned(dir: &Path) -> Result<Vec<AlignedInstance>, ModelError> {
    let text = read_file(dir, ALIGNED_FILE)?;
    align::from_jsonl(&text).map_err(|source| ModelError::Json { path: dir.join(ALIGNED_FILE), source })
}
