//! Value types shared across the crate: distributions, rankings, questions,
//! groups, datasets and reward tables.
//!
//! Everything here is an immutable value once constructed. Constructors
//! validate their invariants and return [`DomainError`] otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a [`ProbDistribution`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Default minimum mass below which a vector cannot be renormalized.
pub const DEFAULT_MU_MIN: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("distribution needs at least 2 entries, got {0}")]
    TooFewOptions(usize),
    #[error("probability {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    BadSum(f64),
    #[error("cannot renormalize: total mass {0} is below the minimum")]
    DegenerateMass(f64),
    #[error("not a permutation of 0..{len}: {order:?}")]
    InvalidRanking { order: Vec<usize>, len: usize },
    #[error("question {0:?}: {1}")]
    InvalidQuestion(String, String),
    #[error("group name must be non-empty")]
    EmptyGroupName,
    #[error("duplicate {0}: {1}")]
    Duplicate(&'static str, String),
    #[error("missing target for group {group} on question {question}")]
    MissingTarget { group: String, question: String },
    #[error("target for group {group} on question {question} has {got} options, question has {want}")]
    TargetArity {
        group: String,
        question: String,
        got: usize,
        want: usize,
    },
    #[error("unknown question {0:?}")]
    UnknownQuestion(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("reward matrix: {0}")]
    InvalidRewardMatrix(String),
}

/// A probability vector over `K >= 2` answer options.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbDistribution(Vec<f64>);

impl ProbDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DomainError> {
        if probs.len() < 2 {
            return Err(DomainError::TooFewOptions(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DomainError::OutOfRange { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DomainError::BadSum(sum));
        }
        Ok(Self(probs))
    }

    /// Divides non-negative weights by their sum. Fails when the total mass
    /// does not exceed `mu_min`.
    pub fn renormalize(weights: &[f64], mu_min: f64) -> Result<Self, DomainError> {
        if weights.len() < 2 {
            return Err(DomainError::TooFewOptions(weights.len()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DomainError::OutOfRange { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum <= mu_min {
            return Err(DomainError::DegenerateMass(sum));
        }
        Ok(Self(weights.iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(k: usize) -> Result<Self, DomainError> {
        if k < 2 {
            return Err(DomainError::TooFewOptions(k));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for ProbDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        Self::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Option indices from most to least preferred.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Ranking(Vec<usize>);

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self, DomainError> {
        let len = order.len();
        let mut seen = vec![false; len];
        for &i in &order {
            if i >= len || seen[i] {
                return Err(DomainError::InvalidRanking { order, len });
            }
            seen[i] = true;
        }
        Ok(Self(order))
    }

    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de> Deserialize<'de> for Ranking {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let order = Vec::<usize>::deserialize(d)?;
        Self::new(order).map_err(serde::de::Error::custom)
    }
}

/// Sorts option indices by descending probability. Ties go to the lower index.
pub fn ranking_from_distribution(d: &ProbDistribution) -> Ranking {
    let p = d.as_slice();
    let mut order: Vec<usize> = (0..p.len()).collect();
    // sort_by is stable, so equal probabilities keep ascending index order
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    Ranking(order)
}

/// Letters used to name options in ranked responses: `A`, `B`, ...
pub fn option_letters(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            let c = char::from(b'A' + (i % 26) as u8);
            if i < 26 {
                c.to_string()
            } else {
                format!("{c}{}", i / 26)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub option_labels: Vec<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, option_labels: Vec<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if option_labels.len() < 2 {
            return Err(DomainError::InvalidQuestion(
                id,
                format!("needs at least 2 options, got {}", option_labels.len()),
            ));
        }
        let unique: BTreeSet<&String> = option_labels.iter().collect();
        if unique.len() != option_labels.len() {
            return Err(DomainError::InvalidQuestion(id, "option labels must be unique".into()));
        }
        Ok(Self { id, option_labels })
    }

    pub fn num_options(&self) -> usize {
        self.option_labels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GroupId(String);

impl GroupId {
    pub fn new(name: impl Into<String>) -> Result<Self, DomainError> {
        let name = name.into();
        if name.is_empty() {
            return Err(DomainError::EmptyGroupName);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for GroupId {
    type Error = DomainError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<GroupId> for String {
    fn from(g: GroupId) -> Self {
        g.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Distributional (DPA) or ordinal (OPA) preference alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Dpa,
    Opa,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::Dpa => "dpa",
            TaskMode::Opa => "opa",
        })
    }
}

/// A parsed policy output.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Distribution(ProbDistribution),
    Ranking(Ranking),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Questions plus every group's private target distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    questions: Vec<Question>,
    groups: Vec<GroupId>,
    targets: BTreeMap<GroupId, BTreeMap<String, ProbDistribution>>,
    split: Split,
}

impl PreferenceDataset {
    /// Builds a dataset with every question in the training split.
    pub fn new(
        questions: Vec<Question>,
        groups: Vec<GroupId>,
        targets: BTreeMap<GroupId, BTreeMap<String, ProbDistribution>>,
    ) -> Result<Self, DomainError> {
        let mut ids = BTreeSet::new();
        for q in &questions {
            if !ids.insert(q.id.as_str()) {
                return Err(DomainError::Duplicate("question", q.id.clone()));
            }
        }
        let mut names = BTreeSet::new();
        for g in &groups {
            if !names.insert(g) {
                return Err(DomainError::Duplicate("group", g.to_string()));
            }
        }
        for g in &groups {
            let per_group = targets.get(g);
            for q in &questions {
                let t = per_group.and_then(|m| m.get(&q.id)).ok_or_else(|| {
                    DomainError::MissingTarget {
                        group: g.to_string(),
                        question: q.id.clone(),
                    }
                })?;
                if t.len() != q.num_options() {
                    return Err(DomainError::TargetArity {
                        group: g.to_string(),
                        question: q.id.clone(),
                        got: t.len(),
                        want: q.num_options(),
                    });
                }
            }
        }
        let split = Split {
            train: questions.iter().map(|q| q.id.clone()).collect(),
            test: Vec::new(),
        };
        Ok(Self {
            questions,
            groups,
            targets,
            split,
        })
    }

    /// Shuffles question ids with `seed` and puts `round(ratio * M)` of them
    /// (at least one, and leaving at least one for test when `M >= 2`) in
    /// the training split. Both halves keep dataset order.
    pub fn with_ratio_split(mut self, ratio: f64, seed: u64) -> Result<Self, DomainError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(DomainError::InvalidSplit(format!("ratio {ratio} not in (0, 1)")));
        }
        let m = self.questions.len();
        let n_train = if m <= 1 {
            m
        } else {
            ((ratio * m as f64).round() as usize).clamp(1, m - 1)
        };
        let mut idx: Vec<usize> = (0..m).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let train_set: BTreeSet<usize> = idx[..n_train].iter().copied().collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, q) in self.questions.iter().enumerate() {
            if train_set.contains(&i) {
                train.push(q.id.clone());
            } else {
                test.push(q.id.clone());
            }
        }
        self.split = Split { train, test };
        Ok(self)
    }

    pub fn with_split(mut self, split: Split) -> Result<Self, DomainError> {
        let all: BTreeSet<&str> = self.questions.iter().map(|q| q.id.as_str()).collect();
        let mut seen = BTreeSet::new();
        for id in split.train.iter().chain(&split.test) {
            if !all.contains(id.as_str()) {
                return Err(DomainError::UnknownQuestion(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(DomainError::InvalidSplit(format!("{id} appears twice")));
            }
        }
        if seen.len() != all.len() {
            return Err(DomainError::InvalidSplit("split does not cover every question".into()));
        }
        self.split = split;
        Ok(self)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn train_questions(&self) -> Vec<&Question> {
        self.questions_for(&self.split.train)
    }

    pub fn test_questions(&self) -> Vec<&Question> {
        self.questions_for(&self.split.test)
    }

    fn questions_for(&self, ids: &[String]) -> Vec<&Question> {
        let ids: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        self.questions
            .iter()
            .filter(|q| ids.contains(q.id.as_str()))
            .collect()
    }

    pub fn target(&self, group: &GroupId, question: &str) -> Option<&ProbDistribution> {
        self.targets.get(group)?.get(question)
    }

    /// One group's private targets.
    pub fn group_targets(&self, group: &GroupId) -> Option<&BTreeMap<String, ProbDistribution>> {
        self.targets.get(group)
    }
}

/// A policy response to one question, with its parse result.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutItem {
    pub question_id: String,
    pub raw_response: String,
    pub parsed: Option<Prediction>,
    pub format_score: f64,
}

/// Rewards `r[g][j]` given by each group to each rollout item of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrix {
    iteration: u64,
    groups: Vec<GroupId>,
    rewards: Vec<Vec<f64>>,
}

impl RewardMatrix {
    pub fn new(
        iteration: u64,
        groups: Vec<GroupId>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self, DomainError> {
        if groups.is_empty() || groups.len() != rewards.len() {
            return Err(DomainError::InvalidRewardMatrix(format!(
                "{} groups but {} reward rows",
                groups.len(),
                rewards.len()
            )));
        }
        let items = rewards[0].len();
        for (g, row) in groups.iter().zip(&rewards) {
            if row.len() != items {
                return Err(DomainError::InvalidRewardMatrix(format!(
                    "group {g} scored {} items, expected {items}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DomainError::InvalidRewardMatrix(format!(
                    "group {g} reward {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            iteration,
            groups,
            rewards,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_items(&self) -> usize {
        self.rewards[0].len()
    }

    /// Rewards given by group `g`, one per item.
    pub fn group_row(&self, g: usize) -> &[f64] {
        &self.rewards[g]
    }

    /// Rewards for item `j`, one per group.
    pub fn item_column(&self, j: usize) -> Vec<f64> {
        self.rewards.iter().map(|row| row[j]).collect()
    }

    pub fn get(&self, g: usize, j: usize) -> f64 {
        self.rewards[g][j]
    }

    /// Mean reward of each group over all items.
    pub fn group_means(&self) -> Vec<f64> {
        let n = self.num_items().max(1) as f64;
        self.rewards
            .iter()
            .map(|row| row.iter().sum::<f64>() / n)
            .collect()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rewards
    }
}
