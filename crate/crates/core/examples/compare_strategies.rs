//! Runs the 8-group fairness scenario for the adaptive, average and min
//! rules over five seeds and writes the comparison reports.
//!
//! Pass another experiment config as the first argument to compare on it
//! instead. Runs in under a minute with `--release`.

use std::path::PathBuf;

use appa::aggregation::AggregationStrategy;
use appa::harness::{compare_strategies, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/fairness_8g.json"));
    let cfg = ExperimentConfig::load(&path)?;
    let data = cfg.dataset()?;
    let strategies = [AggregationStrategy::appa(), AggregationStrategy::Average, AggregationStrategy::min()];
    let seeds: Vec<u64> = (0..5).collect();
    let out = std::env::temp_dir().join("appa-compare");
    let cmp = compare_strategies(&cfg, &data, &strategies, &seeds, Some(&out))?;
    cmp.write_all(&out)?;
    println!("{:<8} {:>8} {:>8} {:>8}", "rule", "FI", "avg AS", "min AS");
    for s in cmp.summary() {
        println!("{:<8} {:>8.4} {:>8.4} {:>8.4}", s.strategy, s.fi.mean, s.avg_as.mean, s.min_as.mean);
    }
    println!("per-group scores (spider plot):");
    for s in cmp.summary() {
        println!("  {:<8} {:.3?}", s.strategy, s.spider.values().collect::<Vec<_>>());
    }
    println!("reports written to {}", out.display());
    Ok(())
}
