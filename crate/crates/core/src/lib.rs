//! Sparse NER experiments: IOB2 corpora, entity perturbation, gradual
//! magnitude pruning of a small neural tagger, entity-level scoring and
//! cross-lingual analysis.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod perturb;
pub mod prune;
pub mod tagger;

pub use corpus::{Corpus, EntityType, Sentence, Span, Split, Tag};
pub use error::{
    AnalysisError, CorpusError, EvalError, ExperimentError, PerturbError, PruneError, TaggerError,
};
pub use exec::Exec;
