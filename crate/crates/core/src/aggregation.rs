//! Server-side reward aggregation.
//!
//! Strategies: plain average, per-item minimum, the fixed-alpha
//! log-sum-exp family, and the adaptive scheme that gates a group-weighted
//! log-sum-exp on a Fairness Index and derives the group weights from an
//! exponential moving average of each group's past rewards.
//!
//! Every `exp`/`log` here is max-shifted before exponentiation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{GroupId, RewardMatrix, DEFAULT_MU_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("cannot aggregate an empty reward vector")]
    Empty,
    #[error("state tracks groups {state:?} but rewards come from {rewards:?}")]
    GroupMismatch {
        state: Vec<String>,
        rewards: Vec<String>,
    },
    #[error("{weights} weights for {rewards} rewards")]
    WeightCount { weights: usize, rewards: usize },
    #[error("missing mean reward for group {0}")]
    MissingGroup(String),
    #[error("invalid aggregation config: {0}")]
    InvalidConfig(String),
}

/// Hyperparameters of the adaptive scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppaConfig {
    /// EMA decay of the per-group history.
    pub lambda_ema: f64,
    /// Temperature of the reversed softmax.
    pub temperature: f64,
    /// Fairness threshold; at or above it items are plainly averaged.
    pub tau: f64,
    /// Questions whose mean reward is below this are left out of the FI.
    pub mu_min: f64,
    pub cov_max: f64,
}

impl Default for AppaConfig {
    fn default() -> Self {
        Self {
            lambda_ema: 0.8,
            temperature: 0.1,
            tau: 0.99,
            mu_min: DEFAULT_MU_MIN,
            cov_max: 10.0,
        }
    }
}

impl AppaConfig {
    pub fn validate(&self) -> Result<(), AggregationError> {
        let bad = |m: &str| Err(AggregationError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.lambda_ema) {
            return bad("lambda_ema must be in [0, 1)");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.mu_min >= 0.0) || !(self.cov_max > 0.0) {
            return bad("mu_min must be >= 0 and cov_max > 0");
        }
        Ok(())
    }
}

/// The scalar of the fixed-alpha family, including the two limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    NegInf,
    PosInf,
}

impl Alpha {
    pub fn from_f64(a: f64) -> Self {
        if a == f64::NEG_INFINITY {
            Alpha::NegInf
        } else if a == f64::INFINITY {
            Alpha::PosInf
        } else {
            Alpha::Finite(a)
        }
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Finite(a) => write!(f, "{a}"),
            Alpha::NegInf => f.write_str("-inf"),
            Alpha::PosInf => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Alpha {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "-inf" | "-infinity" => Ok(Alpha::NegInf),
            "inf" | "+inf" | "infinity" => Ok(Alpha::PosInf),
            t => t
                .parse::<f64>()
                .ok()
                .filter(|a| !a.is_nan())
                .map(Alpha::from_f64)
                .ok_or_else(|| AggregationError::InvalidConfig(format!("bad alpha {t:?}"))),
        }
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Alpha::Finite(a) => s.serialize_f64(*a),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(Alpha::Finite(a)),
            Raw::Text(t) => match t.as_str() {
                "-inf" | "-infinity" => Ok(Alpha::NegInf),
                "inf" | "+inf" | "infinity" => Ok(Alpha::PosInf),
                other => other
                    .parse::<f64>()
                    .map(Alpha::from_f64)
                    .map_err(serde::de::Error::custom),
            },
        }
    }
}

/// How the minimum strategy picks its reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinMode {
    /// Worst group separately for every item.
    #[default]
    PerItem,
    /// The single group with the lowest mean reward this iteration.
    WorstGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationStrategy {
    Average,
    Min {
        #[serde(default)]
        mode: MinMode,
    },
    FixedAlpha {
        alpha: Alpha,
    },
    Appa {
        #[serde(default)]
        config: AppaConfig,
    },
}

impl AggregationStrategy {
    pub fn appa() -> Self {
        AggregationStrategy::Appa {
            config: AppaConfig::default(),
        }
    }

    pub fn min() -> Self {
        AggregationStrategy::Min {
            mode: MinMode::PerItem,
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            AggregationStrategy::Average => "average".into(),
            AggregationStrategy::Min {
                mode: MinMode::PerItem,
            } => "min".into(),
            AggregationStrategy::Min {
                mode: MinMode::WorstGroup,
            } => "min_group".into(),
            AggregationStrategy::FixedAlpha { alpha } => format!("alpha({alpha})"),
            AggregationStrategy::Appa { .. } => "appa".into(),
        }
    }

    /// Configuration used for the FI and the history, whatever the strategy.
    pub fn appa_config(&self) -> AppaConfig {
        match self {
            AggregationStrategy::Appa { config } => *config,
            _ => AppaConfig::default(),
        }
    }
}

/// Parses the labels produced by [`AggregationStrategy::label`]; `alpha=x`
/// is accepted as well as `alpha(x)`. `appa` gets the default config.
impl std::str::FromStr for AggregationStrategy {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "average" => return Ok(AggregationStrategy::Average),
            "min" => return Ok(AggregationStrategy::min()),
            "min_group" => {
                return Ok(AggregationStrategy::Min {
                    mode: MinMode::WorstGroup,
                })
            }
            "appa" => return Ok(AggregationStrategy::appa()),
            _ => {}
        }
        let alpha = s
            .strip_prefix("alpha=")
            .or_else(|| s.strip_prefix("alpha(").and_then(|r| r.strip_suffix(')')))
            .ok_or_else(|| AggregationError::InvalidConfig(format!("unknown strategy {s:?}")))?;
        Ok(AggregationStrategy::FixedAlpha {
            alpha: alpha.parse()?,
        })
    }
}

fn non_empty(r: &[f64]) -> Result<(), AggregationError> {
    if r.is_empty() {
        Err(AggregationError::Empty)
    } else {
        Ok(())
    }
}

pub fn average_agg(rewards: &[f64]) -> Result<f64, AggregationError> {
    non_empty(rewards)?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

pub fn min_agg(rewards: &[f64]) -> Result<f64, AggregationError> {
    non_empty(rewards)?;
    Ok(rewards.iter().copied().fold(f64::INFINITY, f64::min))
}

fn max_of(r: &[f64]) -> f64 {
    r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log(mean(exp(x)))`, max-shifted.
fn log_mean_exp(x: &[f64]) -> f64 {
    let m = max_of(x);
    let mean = x.iter().map(|v| (v - m).exp()).sum::<f64>() / x.len() as f64;
    m + mean.ln()
}

/// `(1/alpha) log(mean(exp(alpha r)))`; mean at 0, min/max at the limits.
pub fn fixed_alpha_agg(alpha: Alpha, rewards: &[f64]) -> Result<f64, AggregationError> {
    non_empty(rewards)?;
    match alpha {
        Alpha::NegInf => min_agg(rewards),
        Alpha::PosInf => Ok(max_of(rewards)),
        Alpha::Finite(a) if a == 0.0 => average_agg(rewards),
        Alpha::Finite(a) => {
            let scaled: Vec<f64> = rewards.iter().map(|r| a * r).collect();
            Ok(log_mean_exp(&scaled) / a)
        }
    }
}

/// Mean over questions of `1 / (1 + CoV^2)` of the per-group rewards.
///
/// Population standard deviation. A question with zero spread scores 1;
/// a question whose mean is below `mu_min` is skipped; CoV is capped at
/// `cov_max`. With every question skipped the index is 1.
pub fn fairness_index(rewards: &RewardMatrix, cfg: &AppaConfig) -> f64 {
    let n = rewards.num_groups() as f64;
    let mut total = 0.0;
    let mut counted = 0usize;
    for j in 0..rewards.num_items() {
        let col = rewards.item_column(j);
        let mu = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n;
        if var == 0.0 {
            total += 1.0;
            counted += 1;
            continue;
        }
        if mu < cfg.mu_min {
            continue;
        }
        let cov = (var.sqrt() / mu).min(cfg.cov_max);
        total += 1.0 / (1.0 + cov * cov);
        counted += 1;
    }
    if counted == 0 {
        1.0
    } else {
        total / counted as f64
    }
}

/// Reversed softmax: `softmax((1 - h) / T)`.
pub fn reversed_softmax(histories: &[f64], temperature: f64) -> Vec<f64> {
    if histories.is_empty() {
        return Vec::new();
    }
    let logits: Vec<f64> = histories.iter().map(|h| (1.0 - h) / temperature).collect();
    let m = max_of(&logits);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// The adaptive log-sum-exp branch: `log(mean_g exp(alpha_g r_g))`.
pub fn weighted_log_mean_exp(weights: &[f64], rewards: &[f64]) -> Result<f64, AggregationError> {
    non_empty(rewards)?;
    if weights.len() != rewards.len() {
        return Err(AggregationError::WeightCount {
            weights: weights.len(),
            rewards: rewards.len(),
        });
    }
    let scaled: Vec<f64> = weights.iter().zip(rewards).map(|(a, r)| a * r).collect();
    Ok(log_mean_exp(&scaled))
}

/// Per-group derivative of the adaptive branch with respect to each reward:
/// `alpha_g exp(alpha_g r_g) / sum_g' exp(alpha_g' r_g')`.
///
/// Diagnostic only; never used for training.
pub fn effective_weights(alpha: &[f64], rewards: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = alpha.iter().zip(rewards).map(|(a, r)| a * r).collect();
    let m = max_of(&scaled);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    alpha.iter().zip(&exps).map(|(a, e)| a * e / z).collect()
}

/// Fairness state the server carries between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationState {
    groups: Vec<GroupId>,
    histories: Vec<f64>,
    weights: Vec<f64>,
    last_fi: f64,
    iteration: u64,
}

impl AggregationState {
    /// Zero history and uniform weights for every group.
    pub fn new(groups: Vec<GroupId>) -> Self {
        let n = groups.len();
        Self {
            histories: vec![0.0; n],
            weights: vec![1.0 / n as f64; n],
            last_fi: 1.0,
            iteration: 0,
            groups,
        }
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn histories(&self) -> &[f64] {
        &self.histories
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn last_fi(&self) -> f64 {
        self.last_fi
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn history_of(&self, g: &GroupId) -> Option<f64> {
        self.groups.iter().position(|x| x == g).map(|i| self.histories[i])
    }

    pub fn weight_of(&self, g: &GroupId) -> Option<f64> {
        self.groups.iter().position(|x| x == g).map(|i| self.weights[i])
    }

    fn check_groups(&self, groups: &[GroupId]) -> Result<(), AggregationError> {
        if self.groups != groups {
            return Err(AggregationError::GroupMismatch {
                state: self.groups.iter().map(|g| g.to_string()).collect(),
                rewards: groups.iter().map(|g| g.to_string()).collect(),
            });
        }
        Ok(())
    }

    /// Recomputes `alpha` from the current (previous-iteration) history.
    pub fn refresh_weights(&mut self, cfg: &AppaConfig) {
        self.weights = compute_weights(self, cfg);
    }
}

/// `h_g <- lambda h_g + (1 - lambda) mean_g`, with means given per group in
/// state order.
pub fn update_history(
    state: &AggregationState,
    mean_rewards: &[(GroupId, f64)],
    cfg: &AppaConfig,
) -> Result<AggregationState, AggregationError> {
    let mut next = state.clone();
    for (i, g) in state.groups.iter().enumerate() {
        let r = mean_rewards
            .iter()
            .find(|(name, _)| name == g)
            .map(|(_, r)| *r)
            .ok_or_else(|| AggregationError::MissingGroup(g.to_string()))?;
        next.histories[i] = cfg.lambda_ema * state.histories[i] + (1.0 - cfg.lambda_ema) * r;
    }
    next.iteration += 1;
    Ok(next)
}

/// Weights for the coming iteration from the state's current history.
pub fn compute_weights(state: &AggregationState, cfg: &AppaConfig) -> Vec<f64> {
    reversed_softmax(&state.histories, cfg.temperature)
}

/// Which rule produced an iteration's aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Average,
    Adaptive,
    Min,
    FixedAlpha,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub rewards: Vec<f64>,
    pub fi: f64,
    pub branch: Branch,
}

/// The adaptive rule without the history update.
///
/// One FI over the whole rollout picks the branch for every item. The
/// weights must already be those derived from the previous history.
pub fn appa_rewards(
    rewards: &RewardMatrix,
    state: &AggregationState,
    cfg: &AppaConfig,
) -> Result<Aggregated, AggregationError> {
    state.check_groups(rewards.groups())?;
    let fi = fairness_index(rewards, cfg);
    let (branch, out) = if fi >= cfg.tau {
        let out = (0..rewards.num_items())
            .map(|j| average_agg(&rewards.item_column(j)))
            .collect::<Result<_, _>>()?;
        (Branch::Average, out)
    } else {
        let out = (0..rewards.num_items())
            .map(|j| weighted_log_mean_exp(&state.weights, &rewards.item_column(j)))
            .collect::<Result<_, _>>()?;
        (Branch::Adaptive, out)
    };
    Ok(Aggregated {
        rewards: out,
        fi,
        branch,
    })
}

/// Adaptive aggregation followed by the history update and FI bookkeeping.
pub fn appa_aggregate(
    rewards: &RewardMatrix,
    state: &AggregationState,
    cfg: &AppaConfig,
) -> Result<(Vec<f64>, AggregationState), AggregationError> {
    let agg = appa_rewards(rewards, state, cfg)?;
    let next = finish_round(state, rewards, agg.fi, cfg)?;
    Ok((agg.rewards, next))
}

/// Folds one iteration's raw rewards into the history, records the FI and
/// derives the weights for the next iteration.
pub fn finish_round(
    state: &AggregationState,
    rewards: &RewardMatrix,
    fi: f64,
    cfg: &AppaConfig,
) -> Result<AggregationState, AggregationError> {
    state.check_groups(rewards.groups())?;
    let means: Vec<(GroupId, f64)> = rewards
        .groups()
        .iter()
        .cloned()
        .zip(rewards.group_means())
        .collect();
    let mut next = update_history(state, &means, cfg)?;
    next.last_fi = fi;
    next.refresh_weights(cfg);
    Ok(next)
}

/// Applies any strategy to one iteration's rewards. The state is read, not
/// updated; call [`finish_round`] once the policy step is done.
pub fn aggregate(
    strategy: &AggregationStrategy,
    rewards: &RewardMatrix,
    state: &AggregationState,
) -> Result<Aggregated, AggregationError> {
    let cfg = strategy.appa_config();
    let items = rewards.num_items();
    let per_item = |f: &dyn Fn(&[f64]) -> Result<f64, AggregationError>| {
        (0..items)
            .map(|j| f(&rewards.item_column(j)))
            .collect::<Result<Vec<_>, _>>()
    };
    let (out, branch) = match strategy {
        AggregationStrategy::Appa { config } => return appa_rewards(rewards, state, config),
        AggregationStrategy::Average => (per_item(&average_agg)?, Branch::Average),
        AggregationStrategy::Min {
            mode: MinMode::PerItem,
        } => (per_item(&min_agg)?, Branch::Min),
        AggregationStrategy::Min {
            mode: MinMode::WorstGroup,
        } => {
            let means = rewards.group_means();
            let worst = means
                .iter()
                .enumerate()
                .fold(0, |b, (i, m)| if *m < means[b] { i } else { b });
            (rewards.group_row(worst).to_vec(), Branch::Min)
        }
        AggregationStrategy::FixedAlpha { alpha } => (
            per_item(&|r: &[f64]| fixed_alpha_agg(*alpha, r))?,
            Branch::FixedAlpha,
        ),
    };
    Ok(Aggregated {
        rewards: out,
        fi: fairness_index(rewards, &cfg),
        branch,
    })
}
