use thiserror::Error;

use crate::aggregation::AggregationError;
use crate::domain::DomainError;
use crate::federation::FederationError;
use crate::harness::HarnessError;
use crate::metrics::MetricError;
use crate::policy::PolicyError;

/// Crate-wide error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
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
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
