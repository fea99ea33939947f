use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown tag `{tag}`")]
    Tag { line: usize, tag: String },
    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },
    #[error("duplicate language code `{0}` in metadata")]
    DuplicateLanguage(String),
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("no corpus belongs to {scope} group `{group}`")]
    EmptyGroup { scope: String, group: String },
    #[error("languages missing from metadata: {}", .0.join(", "))]
    MissingMetadata(Vec<String>),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but {predicted} predictions were given")]
    SentenceCount { gold: usize, predicted: usize },
    #[error("sentence {index}: gold has {gold} tokens, prediction has {predicted}")]
    TokenCount {
        index: usize,
        gold: usize,
        predicted: usize,
    },
    #[error("sparsity {0}% is not one of 0, 50, 70, 80, 90, 95, 98")]
    Sparsity(u32),
}

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("target sparsity {0} must lie in [0, 1)")]
    Target(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("requested sparsity {requested} is below the achieved {achieved}")]
    NotMonotone { requested: f64, achieved: f64 },
    #[error("no prunable weights under this strategy")]
    NothingPrunable,
    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("invalid tagger config: {0}")]
    Config(String),
    #[error("schedule ends at step {end_step} but training only runs {total_steps} steps")]
    ScheduleTooLong { end_step: u64, total_steps: u64 },
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("missing corpus file {}", .0.display())]
    MissingCorpus(PathBuf),
    #[error("{}: {source}", .path.display())]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("languages missing from metadata: {}", .0.join(", "))]
    MissingMetadata(Vec<String>),
    #[error("inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: one input is constant")]
    Undefined,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
