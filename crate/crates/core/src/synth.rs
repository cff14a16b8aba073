//! Seeded synthetic corpora with gold alignments.
//!
//! Templates are a JSON array:
//!
//! ```json
//! [{"elements": [{"ph": "name", "values": {"red_door_cafe": "red door cafe"}}, {"lit": "is cheap ."}]}]
//! ```
//!
//! Every sampled text records, for each placeholder, the span its surface
//! occupies together with the feature it realises.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignedInstance, AlignedSegment};
use crate::corpus::{tokenize, Corpus, CorpusError, Feature, FeatureCollection, Instance};
use crate::lattice::Span;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("the number of instances must be positive")]
    ZeroCount,
    #[error("no templates")]
    NoTemplates,
    #[error("template {template}: placeholder {attribute:?} has an empty value pool")]
    EmptyPool { template: usize, attribute: String },
    #[error("template {template}: attribute {attribute:?} appears twice")]
    RepeatedAttribute { template: usize, attribute: String },
    #[error("template {template}: {message}")]
    Invalid { template: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateElement {
    Placeholder {
        ph: String,
        /// Feature value to surface text.
        values: IndexMap<String, String>,
    },
    Literal {
        lit: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub elements: Vec<TemplateElement>,
}

pub fn parse_templates(json: &str) -> Result<Vec<Template>, serde_json::Error> {
    serde_json::from_str(json)
}

fn check(templates: &[Template]) -> Result<(), SynthError> {
    if templates.is_empty() {
        return Err(SynthError::NoTemplates);
    }
    for (t, template) in templates.iter().enumerate() {
        let invalid = |message: String| SynthError::Invalid { template: t, message };
        if template.elements.is_empty() {
            return Err(invalid("no elements".into()));
        }
        let mut attributes = HashSet::new();
        for element in &template.elements {
            let TemplateElement::Placeholder { ph, values } = element else { continue };
            if !attributes.insert(ph.as_str()) {
                return Err(SynthError::RepeatedAttribute { template: t, attribute: ph.clone() });
            }
            if values.is_empty() {
                return Err(SynthError::EmptyPool { template: t, attribute: ph.clone() });
            }
            for (value, surface) in values {
                Feature::new(ph, value).map_err(|e| invalid(e.to_string()))?;
                if tokenize(surface).map_or(true, |tokens| tokens.is_empty()) {
                    return Err(invalid(format!("{ph}={value} has an empty surface")));
                }
            }
        }
    }
    Ok(())
}

/// Samples `n` texts: a template uniformly, then every placeholder value
/// uniformly from its pool. Returns the corpus and its gold alignment.
pub fn synthesize(templates: &[Template], n: usize, seed: u64) -> Result<(Corpus, Vec<AlignedInstance>), SynthError> {
    if n == 0 {
        return Err(SynthError::ZeroCount);
    }
    check(templates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len();
    let mut instances = Vec::with_capacity(n);
    let mut gold = Vec::with_capacity(n);
    for i in 0..n {
        let template = &templates[rng.gen_range(0..templates.len())];
        let id = format!("s{:0width$}", i + 1);
        let mut pieces: Vec<(String, FeatureCollection)> = Vec::new();
        for element in &template.elements {
            match element {
                TemplateElement::Placeholder { ph, values } => {
                    let (value, surface) = values.get_index(rng.gen_range(0..values.len())).expect("non-empty pool");
                    let feature = Feature::new(ph, value)?;
                    pieces.push((surface.clone(), [feature].into_iter().collect()));
                }
                TemplateElement::Literal { lit } => match pieces.last_mut() {
                    Some((text, cc)) if cc.is_empty() => {
                        text.push(' ');
                        text.push_str(lit);
                    }
                    _ => pieces.push((lit.clone(), FeatureCollection::new())),
                },
            }
        }
        let mut tokens = Vec::new();
        let mut segments = Vec::new();
        let mut cc = FeatureCollection::new();
        for (text, features) in pieces {
            let piece = tokenize(&text)?;
            if piece.is_empty() {
                continue;
            }
            let span = Span::new(tokens.len(), tokens.len() + piece.len());
            tokens.extend(piece);
            cc.extend(&features);
            segments.push(AlignedSegment { span, features });
        }
        let instance = Instance::new(id.clone(), crate::corpus::join_tokens(&tokens), cc)?;
        debug_assert_eq!(instance.tokens, tokens);
        instances.push(instance);
        gold.push(AlignedInstance { id, tokens, segments });
    }
    Ok((Corpus::new(instances)?, gold))
}
