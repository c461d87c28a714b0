//! Fair reward aggregation for federated preference alignment.
//!
//! Groups keep their preference distributions private and only return
//! scalar rewards for responses broadcast by a central trainer. The
//! trainer aggregates those rewards with an adaptive rule that leans
//! towards whichever groups have been served worst, and feeds the result
//! to a PPO update of a small tabular policy.
//!
//! - [`domain`]: distributions, rankings, questions, datasets, reward matrices
//! - [`metrics`]: JS, Wasserstein, cosine and Borda rewards
//! - [`parsing`]: response grammars, format scores, reward blending
//! - [`aggregation`]: average, min, fixed-alpha and adaptive aggregation
//! - [`federation`]: rounds over in-process or TCP transports
//! - [`policy`]: tabular policy and PPO trainer
//! - [`harness`]: configs, synthetic data, evaluation and comparisons

pub mod aggregation;
pub mod domain;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod parsing;
pub mod policy;

pub use error::{Error, Result};
