//! Datasets, task adapters, metrics and the dev/test evaluation function.

mod adapter;
mod dataset;
mod evaluate;
pub mod metrics;

pub use adapter::{TaskAdapter, TaskKind, OUTPUT_FORMAT_COMPONENT};
pub use dataset::{load_examples, load_delimited, load_jsonl, subsample, ColumnMap, Example, Split};
pub use evaluate::{evaluate, DevFitness, EvalOutcome};
pub use metrics::Metric;

use std::path::Path;

use thiserror::Error;

use crate::genome::GenomeError;
use crate::llm::LlmError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold answers")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to score")]
    EmptyInput,
    #[error("no answer found in the model output")]
    NoAnswerFound,
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("task adapter: {0}")]
    Adapter(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

impl EvalError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
