//! Evaluation of a trained model against a held-out corpus.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::align::{align_corpus, AlignedInstance};
use crate::corpus::{Corpus, Feature, Token};
use crate::generate::{generate, GenQuery};
use crate::lattice::Span;
use crate::model::ModelDir;
use crate::schema::SlotKey;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold alignment for unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("gold alignment for {0:?} does not match the instance's tokens")]
    TokenMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlignmentScores {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub instances: usize,
    /// Instances with a non-empty CC; the others cannot be queried.
    pub evaluated: usize,
    /// Share of query features expressed by a chosen fragment.
    pub feature_coverage: f64,
    /// Share of evaluated instances generated verbatim.
    pub exact_match: f64,
    pub mean_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentScores>,
}

struct Outcome {
    exact: bool,
    covered: usize,
    features: usize,
    weight: f64,
}

/// Queries the model with every test CC and, given gold alignments, scores
/// the alignment of the test corpus under the model's configuration.
pub fn evaluate(model: &ModelDir, test: &Corpus, gold: Option<&[AlignedInstance]>) -> Result<EvalReport, EvalError> {
    let outcomes: Vec<Outcome> = test
        .instances()
        .par_iter()
        .filter(|instance| !instance.cc.is_empty())
        .map(|instance| match generate(&model.model, &GenQuery::new(instance.cc.clone())) {
            Ok(result) => {
                let schema = result.candidate.schema;
                let positions = model.model.schema(schema).expect("generated schema exists").elements.placeholder_positions();
                let expressed: HashSet<&Feature> = positions
                    .into_iter()
                    .zip(&result.candidate.choices)
                    .flat_map(|(position, &item)| {
                        model.model.selectors.fragments[&SlotKey { schema, position }].items()[item].cc.iter()
                    })
                    .collect();
                Outcome {
                    exact: result.text == instance.joined(),
                    covered: instance.cc.iter().filter(|g| expressed.contains(g)).count(),
                    features: instance.cc.len(),
                    weight: result.candidate.weight,
                }
            }
            Err(e) => {
                log::debug!("{}: {e}", instance.id);
                Outcome { exact: false, covered: 0, features: instance.cc.len(), weight: 0.0 }
            }
        })
        .collect();

    let evaluated = outcomes.len();
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let features: usize = outcomes.iter().map(|o| o.features).sum();
    let alignment = gold.map(|gold| score_alignment(model, test, gold)).transpose()?;
    Ok(EvalReport {
        instances: test.len(),
        evaluated,
        feature_coverage: ratio(outcomes.iter().map(|o| o.covered).sum::<usize>() as f64, features),
        exact_match: ratio(outcomes.iter().filter(|o| o.exact).count() as f64, evaluated),
        mean_weight: ratio(outcomes.iter().map(|o| o.weight).sum(), evaluated),
        alignment,
    })
}

type Link = (String, Span, Feature);

fn links(aligned: &[AlignedInstance]) -> HashSet<Link> {
    aligned.iter().flat_map(|a| a.links().map(|(span, g)| (a.id.clone(), span, g.clone()))).collect()
}

fn score_alignment(model: &ModelDir, test: &Corpus, gold: &[AlignedInstance]) -> Result<AlignmentScores, EvalError> {
    let tokens: HashMap<&str, &[Token]> = test.instances().iter().map(|i| (i.id.as_str(), i.tokens.as_slice())).collect();
    for g in gold {
        match tokens.get(g.id.as_str()) {
            None => return Err(EvalError::UnknownInstance(g.id.clone())),
            Some(t) if *t != g.tokens.as_slice() => return Err(EvalError::TokenMismatch(g.id.clone())),
            Some(_) => {}
        }
    }
    let predicted = links(&align_corpus(test, &model.meta.config));
    let gold = links(gold);
    Ok(prf(gold.len(), predicted.len(), gold.intersection(&predicted).count()))
}

/// Precision and recall of an empty set are taken as 1.
pub fn prf(gold: usize, predicted: usize, correct: usize) -> AlignmentScores {
    let precision = if predicted == 0 { 1.0 } else { correct as f64 / predicted as f64 };
    let recall = if gold == 0 { 1.0 } else { correct as f64 / gold as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    AlignmentScores { gold, predicted, correct, precision, recall, f1 }
}
