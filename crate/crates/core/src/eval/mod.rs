//! Benchmark scoring and single-axis ablations.

mod ablation;
mod benchmark;
pub mod metrics;

use std::path::PathBuf;

use thiserror::Error;

pub use ablation::{run_ablation, run_eval, AblationAxis, AblationOutcome, AblationRun, EvalSetup};
pub use benchmark::{
    load_benchmark, parse_benchmark, run_benchmark, AblationTag, Aggregates, BenchmarkItem, ConfigSnapshot,
    EvalConfig, ItemResult, MetricReport, Scores, SCORE_COLUMNS,
};
pub use metrics::{MetricWarning, Prf, Scored};

use crate::embed::EmbedError;
use crate::ingest::IngestError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark dataset is empty")]
    EmptyDataset,
    #[error("benchmark line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("unknown ablation axis {0:?}")]
    InvalidAxis(String),
    #[error("invalid value {value:?} for axis {axis}: {reason}")]
    InvalidAxisValue { axis: String, value: String, reason: String },
    #[error("eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
