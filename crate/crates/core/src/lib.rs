//! Statistical data-to-text generation with human-editable artifacts.
//!
//! The pipeline aligns text fragments to `attribute=value` features using
//! corpus-wide co-occurrence statistics, distils the aligned texts into
//! schemata with placeholders, trains least-squares selectors over schemata
//! and fragments, and generates new text by picking the schema/fragment
//! combination whose weakest selection weight is strongest.

pub mod align;
pub mod corpus;
pub mod eval;
pub mod generate;
pub mod lattice;
pub mod model;
pub mod render;
pub mod schema;
pub mod selector;
pub mod stats;
pub mod synth;

pub use align::{AlignConfig, AlignedInstance, AlignedSegment};
pub use corpus::{Corpus, Feature, FeatureCollection, Instance, Token};
pub use generate::{generate, generate_k, GenQuery, GenResult};
pub use lattice::{Fragment, Neighbourhood, Span};
pub use model::{Model, ModelDir};
pub use stats::CooccurrenceTable;
