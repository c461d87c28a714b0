use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_policy, generate_dataset, load_dataset, DataSource, EvaluationReport, ExperimentConfig, HarnessError};
use crate::aggregation::{AggregationStrategy, Branch};
use crate::domain::PreferenceDataset;
use crate::federation::{GroupClient, InProcessTransport, Transport};
use crate::policy::{train, IterationLog, TabularPolicy, TrainConfig, ValueTable};

impl ExperimentConfig {
    /// Loads or generates the dataset and applies the train/test split.
    pub fn dataset(&self) -> Result<PreferenceDataset, HarnessError> {
        let d = match &self.data {
            DataSource::Path(p) => load_dataset(p)?,
            DataSource::Generate(spec) => generate_dataset(spec)?,
        };
        Ok(d.with_ratio_split(self.split_ratio, self.seed)?)
    }

    pub fn train_config(&self, strategy: &AggregationStrategy, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy: strategy.clone(),
            ppo: self.ppo,
            iterations: self.iterations,
            seed,
            rollouts_per_question: self.rollouts_per_question,
        }
    }

    /// A fresh policy and value table covering every question of `dataset`.
    pub fn initial_policy(&self, dataset: &PreferenceDataset) -> Result<(TabularPolicy, ValueTable), HarnessError> {
        Ok((
            TabularPolicy::new(self.task_mode, dataset.questions(), self.policy)?,
            ValueTable::zeros(dataset.questions()),
        ))
    }

    pub fn in_process_transport(&self, dataset: &PreferenceDataset) -> Result<InProcessTransport, HarnessError> {
        Ok(InProcessTransport::new(GroupClient::all_from_dataset(
            dataset,
            self.metric,
            self.omega,
        )?))
    }
}

/// One trained and evaluated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub seed: u64,
    pub report: EvaluationReport,
    pub log: Vec<IterationLog>,
}

/// FI, branch and weights of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub fi: f64,
    pub branch: Branch,
    pub weights: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn trace(&self) -> Vec<TracePoint> {
        self.log
            .iter()
            .map(|l| TracePoint {
                iteration: l.iteration,
                fi: l.fi,
                branch: l.branch,
                weights: l.weights.clone(),
            })
            .collect()
    }
}

/// Trains from a fresh policy on the training split through `transport`,
/// then evaluates on the test split. With `log_path` the training log is
/// written there as JSON lines, one per iteration.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &PreferenceDataset,
    strategy: &AggregationStrategy,
    seed: u64,
    transport: &mut dyn Transport,
    log_path: Option<&Path>,
) -> Result<(RunRecord, TabularPolicy, ValueTable), HarnessError> {
    let (mut policy, mut values) = cfg.initial_policy(dataset)?;
    let train_qs: Vec<_> = dataset.train_questions().into_iter().cloned().collect();
    let mut sink = match log_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let log = train(
        &mut policy,
        &mut values,
        &train_qs,
        transport,
        &cfg.train_config(strategy, seed),
        |entry, _| {
            if let Some(w) = sink.as_mut() {
                writeln!(w, "{}", entry.to_json_line())?;
            }
            Ok(())
        },
    )?;
    if let Some(mut w) = sink {
        w.flush()?;
    }
    let sampling = cfg.eval_sampling.then_some(seed);
    let report = evaluate_policy(&policy, dataset, cfg.metric, &strategy.appa_config(), sampling)?;
    Ok((
        RunRecord {
            strategy: strategy.label(),
            seed,
            report,
            log: log.iterations,
        },
        policy,
        values,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(xs: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = xs.collect();
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub fi: Stat,
    pub avg_as: Stat,
    pub min_as: Stat,
    pub format_score: Stat,
    /// Mean alignment score per group over seeds.
    pub spider: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub runs: Vec<RunRecord>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    strategy: &'a str,
    seed: u64,
    metric: &'a str,
    fi: f64,
    avg_as: f64,
    min_as: f64,
    format_score: f64,
}

impl Comparison {
    pub fn runs_of<'a>(&'a self, strategy: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.strategy == strategy)
    }

    /// Per-strategy mean and range, in first-appearance order.
    pub fn summary(&self) -> Vec<StrategySummary> {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !order.contains(&r.strategy.as_str()) {
                order.push(&r.strategy);
            }
        }
        order
            .into_iter()
            .map(|s| {
                let runs: Vec<&RunRecord> = self.runs_of(s).collect();
                let mut spider: BTreeMap<String, f64> = BTreeMap::new();
                for r in &runs {
                    for (g, v) in &r.report.as_by_group {
                        *spider.entry(g.clone()).or_default() += v / runs.len() as f64;
                    }
                }
                StrategySummary {
                    strategy: s.to_string(),
                    runs: runs.len(),
                    fi: Stat::of(runs.iter().map(|r| r.report.fi)),
                    avg_as: Stat::of(runs.iter().map(|r| r.report.avg_as)),
                    min_as: Stat::of(runs.iter().map(|r| r.report.min_as)),
                    format_score: Stat::of(runs.iter().map(|r| r.report.format_score)),
                    spider,
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.runs {
            w.serialize(CsvRow {
                strategy: &r.strategy,
                seed: r.seed,
                metric: &self.metric,
                fi: r.report.fi,
                avg_as: r.report.avg_as,
                min_as: r.report.min_as,
                format_score: r.report.format_score,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `comparison.csv`, `summary.json`, `spider.json` and
    /// `weight_traces.json` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("comparison.csv"))?;
        let summary = self.summary();
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        let spider: BTreeMap<&str, &BTreeMap<String, f64>> =
            summary.iter().map(|s| (s.strategy.as_str(), &s.spider)).collect();
        std::fs::write(dir.join("spider.json"), serde_json::to_string_pretty(&spider)? + "\n")?;
        let traces: Vec<serde_json::Value> = self
            .runs
            .iter()
            .map(|r| serde_json::json!({"strategy": r.strategy, "seed": r.seed, "trace": r.trace()}))
            .collect();
        std::fs::write(dir.join("weight_traces.json"), serde_json::to_string(&traces)? + "\n")?;
        Ok(())
    }
}

/// Trains one policy per (strategy, seed) from the same initial policy, in
/// parallel, with in-process groups. With `out_dir`, each run writes its
/// training log to `runs/{strategy}_seed{seed}.jsonl`.
pub fn compare_strategies(
    template: &ExperimentConfig,
    dataset: &PreferenceDataset,
    strategies: &[AggregationStrategy],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Comparison, HarnessError> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("need at least one strategy and one seed".into()));
    }
    template.validate()?;
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d.join("runs"))?;
    }
    let jobs: Vec<(&AggregationStrategy, u64)> = strategies
        .iter()
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|(strategy, seed)| {
            let mut transport = template.in_process_transport(dataset)?;
            let log_path = out_dir.map(|d| d.join("runs").join(format!("{}_seed{seed}.jsonl", strategy.label())));
            run_experiment(template, dataset, strategy, *seed, &mut transport, log_path.as_deref())
                .map(|(record, _, _)| record)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Comparison {
        metric: template.metric.to_string(),
        runs,
    })
}
