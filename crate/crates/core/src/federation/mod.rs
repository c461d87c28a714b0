//! The federated round: broadcast a rollout, let every group score it
//! against its private targets, collect the rewards and aggregate them.
//!
//! Two transports implement [`Transport`]: [`InProcessTransport`] runs the
//! group clients on scoped threads, [`tcp::TcpTransport`] talks to them over
//! newline-delimited JSON. Only scalar rewards cross either one.

pub mod protocol;
pub mod tcp;

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

use crate::aggregation::{
    aggregate, finish_round, AggregationError, AggregationState, AggregationStrategy, Branch,
};
use crate::domain::{
    option_letters, DomainError, GroupId, PreferenceDataset, ProbDistribution, Question,
    RewardMatrix, TaskMode,
};
use crate::metrics::{self, MetricError, MetricKind};
use crate::parsing::{self, BlendError};

pub use protocol::{BroadcastItem, RewardReport, RolloutBroadcast};

/// Default wait for TCP reward reports.
pub const DEFAULT_TCP_DEADLINE: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("group {group}: unknown question {question:?}")]
    UnknownQuestion { group: String, question: String },
    #[error("group {group} has no target for question {question:?}")]
    MissingTarget { group: String, question: String },
    #[error("group {group} scores {metric} but the rollout is {mode}")]
    TaskMismatch {
        group: String,
        metric: MetricKind,
        mode: TaskMode,
    },
    #[error("no report from group {0} before the deadline")]
    Timeout(String),
    #[error("group {0} sent no report")]
    MissingReport(String),
    #[error("group {0} reported twice")]
    DuplicateReport(String),
    #[error("bad report from {group}: {reason}")]
    BadReport { group: String, reason: String },
    #[error("group {group} replied with an error: {message}")]
    ClientError { group: String, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("connection to {0} closed")]
    Disconnected(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Blend(#[from] BlendError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// A group's evaluator. Holds the shared question set and the group's own
/// targets, which never leave it.
#[derive(Debug, Clone)]
pub struct GroupClient {
    group: GroupId,
    questions: BTreeMap<String, Question>,
    targets: BTreeMap<String, ProbDistribution>,
    metric: MetricKind,
    omega: f64,
}

impl GroupClient {
    pub fn new(
        group: GroupId,
        questions: impl IntoIterator<Item = Question>,
        targets: BTreeMap<String, ProbDistribution>,
        metric: MetricKind,
        omega: f64,
    ) -> Self {
        Self {
            group,
            questions: questions.into_iter().map(|q| (q.id.clone(), q)).collect(),
            targets,
            metric,
            omega,
        }
    }

    /// The slice of `dataset` that belongs to `group`.
    pub fn from_dataset(
        dataset: &PreferenceDataset,
        group: &GroupId,
        metric: MetricKind,
        omega: f64,
    ) -> Result<Self, FederationError> {
        let targets = dataset
            .group_targets(group)
            .cloned()
            .ok_or_else(|| FederationError::Protocol(format!("unknown group {group}")))?;
        Ok(Self::new(
            group.clone(),
            dataset.questions().iter().cloned(),
            targets,
            metric,
            omega,
        ))
    }

    /// One client per group of `dataset`, in dataset order.
    pub fn all_from_dataset(
        dataset: &PreferenceDataset,
        metric: MetricKind,
        omega: f64,
    ) -> Result<Vec<Self>, FederationError> {
        dataset
            .groups()
            .iter()
            .map(|g| Self::from_dataset(dataset, g, metric, omega))
            .collect()
    }

    pub fn group(&self) -> &GroupId {
        &self.group
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    fn reward_for(&self, item: &BroadcastItem, mode: TaskMode) -> Result<f64, FederationError> {
        let question = self.questions.get(&item.question_id).ok_or_else(|| {
            FederationError::UnknownQuestion {
                group: self.group.to_string(),
                question: item.question_id.clone(),
            }
        })?;
        let target =
            self.targets
                .get(&item.question_id)
                .ok_or_else(|| FederationError::MissingTarget {
                    group: self.group.to_string(),
                    question: item.question_id.clone(),
                })?;
        let k = question.num_options();
        let report = match mode {
            TaskMode::Dpa => parsing::parse_dpa(&item.response, k),
            TaskMode::Opa => parsing::parse_opa(&item.response, &option_letters(k)),
        };
        if report.is_unparseable() {
            return Ok(0.0);
        }
        let metric_reward = match &report.parsed {
            Some(pred) => metrics::score(self.metric, pred, target)?,
            None => 0.0,
        };
        Ok(parsing::blend_final_reward(
            metric_reward,
            report.score,
            self.omega,
        )?)
    }
}

/// Scores every broadcast item: parse, compare with the group's target,
/// blend with the format score. Unparseable responses score 0.
pub fn client_evaluate(
    client: &GroupClient,
    broadcast: &RolloutBroadcast,
) -> Result<RewardReport, FederationError> {
    if client.metric.task_mode() != broadcast.task_mode {
        return Err(FederationError::TaskMismatch {
            group: client.group.to_string(),
            metric: client.metric,
            mode: broadcast.task_mode,
        });
    }
    let rewards = broadcast
        .items
        .iter()
        .map(|item| client.reward_for(item, broadcast.task_mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RewardReport {
        group: client.group.clone(),
        iteration: broadcast.iteration,
        rewards,
    })
}

/// Delivers a broadcast to every group and brings back their reports.
pub trait Transport: Send {
    fn groups(&self) -> Vec<GroupId>;

    fn collect(&mut self, broadcast: &RolloutBroadcast)
        -> Result<Vec<RewardReport>, FederationError>;

    fn shutdown(&mut self) -> Result<(), FederationError> {
        Ok(())
    }
}

/// Clients evaluated on scoped threads, one per group. Waits without a
/// deadline.
#[derive(Debug, Clone)]
pub struct InProcessTransport {
    clients: Vec<GroupClient>,
}

impl InProcessTransport {
    pub fn new(clients: Vec<GroupClient>) -> Self {
        Self { clients }
    }
}

impl Transport for InProcessTransport {
    fn groups(&self) -> Vec<GroupId> {
        self.clients.iter().map(|c| c.group.clone()).collect()
    }

    fn collect(
        &mut self,
        broadcast: &RolloutBroadcast,
    ) -> Result<Vec<RewardReport>, FederationError> {
        std::thread::scope(|s| {
            let handles: Vec<_> = self
                .clients
                .iter()
                .map(|c| s.spawn(move || client_evaluate(c, broadcast)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client evaluation panicked"))
                .collect()
        })
    }
}

/// Result of one federated round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Aggregated reward per rollout item, for the policy update.
    pub aggregated: Vec<f64>,
    pub matrix: RewardMatrix,
    pub fi: f64,
    pub branch: Branch,
    /// Weights the round was aggregated with.
    pub weights: Vec<f64>,
    /// State after folding this round's raw rewards into the history.
    /// Commit it once the policy update is done.
    pub next_state: AggregationState,
}

/// Assembles reports into a matrix in `groups` order. Every group must
/// report exactly once, for this iteration, with one reward per item.
pub fn assemble_matrix(
    groups: &[GroupId],
    broadcast: &RolloutBroadcast,
    reports: Vec<RewardReport>,
) -> Result<RewardMatrix, FederationError> {
    let mut by_group: BTreeMap<GroupId, RewardReport> = BTreeMap::new();
    for r in reports {
        if r.iteration != broadcast.iteration {
            return Err(FederationError::BadReport {
                group: r.group.to_string(),
                reason: format!("iteration {} != {}", r.iteration, broadcast.iteration),
            });
        }
        if r.rewards.len() != broadcast.items.len() {
            return Err(FederationError::BadReport {
                group: r.group.to_string(),
                reason: format!("{} rewards for {} items", r.rewards.len(), broadcast.items.len()),
            });
        }
        let name = r.group.to_string();
        if by_group.insert(r.group.clone(), r).is_some() {
            return Err(FederationError::DuplicateReport(name));
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for g in groups {
        let r = by_group
            .remove(g)
            .ok_or_else(|| FederationError::MissingReport(g.to_string()))?;
        rows.push(r.rewards);
    }
    if let Some(extra) = by_group.keys().next() {
        return Err(FederationError::BadReport {
            group: extra.to_string(),
            reason: "not a member of this federation".into(),
        });
    }
    Ok(RewardMatrix::new(broadcast.iteration, groups.to_vec(), rows)?)
}

/// Broadcast, wait for every report, aggregate. Nothing is aggregated
/// unless all groups reported.
pub fn run_round(
    transport: &mut dyn Transport,
    broadcast: &RolloutBroadcast,
    strategy: &AggregationStrategy,
    state: &AggregationState,
) -> Result<RoundOutcome, FederationError> {
    let reports = transport.collect(broadcast)?;
    let matrix = assemble_matrix(state.groups(), broadcast, reports)?;
    let agg = aggregate(strategy, &matrix, state)?;
    let next_state = finish_round(state, &matrix, agg.fi, &strategy.appa_config())?;
    Ok(RoundOutcome {
        aggregated: agg.rewards,
        fi: agg.fi,
        branch: agg.branch,
        weights: state.weights().to_vec(),
        next_state,
        matrix,
    })
}
