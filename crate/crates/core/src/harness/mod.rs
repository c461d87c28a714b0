//! Experiment orchestration: configs, datasets, evaluation and strategy
//! comparisons.

mod compare;
mod config;
mod data;
mod eval;

use thiserror::Error;

use crate::aggregation::AggregationError;
use crate::domain::DomainError;
use crate::federation::FederationError;
use crate::metrics::MetricError;
use crate::policy::PolicyError;

pub use compare::{
    compare_strategies, run_experiment, Comparison, RunRecord, Stat, StrategySummary, TracePoint,
};
pub use config::{DataSource, ExperimentConfig, GeneratorSpec};
pub use data::{generate_dataset, load_dataset, save_dataset, DatasetRecord};
pub use eval::{evaluate_policy, group_alignment_score, summarize, EvaluationReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset line {line}: {reason}")]
    Dataset { line: usize, reason: String },
    #[error("no outputs for question {0:?}")]
    MissingOutput(String),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
