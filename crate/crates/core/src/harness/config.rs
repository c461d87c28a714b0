use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::aggregation::AggregationStrategy;
use crate::domain::TaskMode;
use crate::metrics::MetricKind;
use crate::parsing::DEFAULT_OMEGA;
use crate::policy::{PolicyConfig, PpoConfig};

/// Parameters of the synthetic preference generator.
///
/// Every group carries a persistent preference profile per option count.
/// A question's base target is drawn around a profile common to all
/// groups, each group's own draw around its profile, and the group target
/// mixes the two: `(1 - heterogeneity) * base + heterogeneity * own`.
///
/// Profiles are Dirichlet draws whose concentration differs per group,
/// log-spaced over `sharpness` and assigned in seeded random order. Low
/// concentration gives extreme profiles that are hard to serve jointly
/// with the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub groups: usize,
    pub questions: usize,
    pub min_options: usize,
    pub max_options: usize,
    /// 0 makes all groups identical, 1 makes them independent.
    pub heterogeneity: f64,
    /// Dirichlet concentration of per-question draws around a profile.
    /// Larger values make questions of the same size more alike.
    pub concentration: f64,
    /// `[lowest, highest]` profile concentration across groups.
    pub sharpness: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            groups: 4,
            questions: 40,
            min_options: 3,
            max_options: 5,
            heterogeneity: 0.5,
            concentration: 20.0,
            sharpness: [1.0, 1.0],
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.groups == 0 || self.questions == 0 {
            return bad("generator needs at least one group and one question");
        }
        if self.min_options < 2 || self.max_options < self.min_options || self.max_options > 26 {
            return bad("options per question must satisfy 2 <= min <= max <= 26");
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return bad("heterogeneity must be in [0, 1]");
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return bad("concentration must be positive");
        }
        let [lo, hi] = self.sharpness;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("sharpness must be a positive range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path(PathBuf),
    Generate(GeneratorSpec),
}

/// A full experiment, read from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub task_mode: TaskMode,
    pub metric: MetricKind,
    pub strategy: AggregationStrategy,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    pub iterations: usize,
    pub split_ratio: f64,
    /// Training seed; also fixes the train/test split.
    pub seed: u64,
    pub omega: f64,
    pub rollouts_per_question: usize,
    /// Evaluate with sampled instead of greedy outputs.
    pub eval_sampling: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Generate(GeneratorSpec::default()),
            task_mode: TaskMode::Dpa,
            metric: MetricKind::Js,
            strategy: AggregationStrategy::appa(),
            ppo: PpoConfig::default(),
            policy: PolicyConfig::default(),
            iterations: 100,
            split_ratio: 0.8,
            seed: 0,
            omega: DEFAULT_OMEGA,
            rollouts_per_question: 1,
            eval_sampling: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match &self.data {
            DataSource::Generate(g) => g.validate()?,
            DataSource::Path(p) if !p.exists() => {
                return Err(HarnessError::Config(format!("dataset {} does not exist", p.display())))
            }
            DataSource::Path(_) => {}
        }
        if self.metric.task_mode() != self.task_mode {
            return Err(HarnessError::Config(format!(
                "metric {} does not fit task mode {}",
                self.metric, self.task_mode
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(HarnessError::Config("split_ratio must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(HarnessError::Config("omega must be in [0, 1]".into()));
        }
        if self.rollouts_per_question == 0 {
            return Err(HarnessError::Config("rollouts_per_question must be at least 1".into()));
        }
        self.ppo.validate()?;
        self.strategy.appa_config().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"metric":"borda","task_mode":"opa","iterations":3}"#).unwrap();
        assert_eq!(partial.iterations, 3);
        assert_eq!(partial.split_ratio, 0.8);
        assert!(partial.validate().is_ok());
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let cfg = ExperimentConfig {
            metric: MetricKind::Borda,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            split_ratio: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            data: DataSource::Path("/definitely/not/here.ndjson".into()),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
