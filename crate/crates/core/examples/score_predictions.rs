//! Scores one prediction against a group's target with every metric.

use appa::domain::{ranking_from_distribution, ProbDistribution};
use appa::metrics::{borda_reward, cosine_reward, js_reward, wasserstein_reward};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = ProbDistribution::new(vec![0.6, 0.3, 0.1])?;
    let candidates = [
        ("exact", vec![0.6, 0.3, 0.1]),
        ("flat", vec![1.0 / 3.0; 3]),
        ("reversed", vec![0.1, 0.3, 0.6]),
        ("one-hot", vec![1.0, 0.0, 0.0]),
    ];
    println!("{:<10} {:>8} {:>12} {:>8} {:>8}", "pred", "js", "wasserstein", "cosine", "borda");
    for (name, p) in candidates {
        let pred = ProbDistribution::new(p)?;
        println!(
            "{name:<10} {:>8.4} {:>12.4} {:>8.4} {:>8.4}",
            js_reward(&pred, &target)?,
            wasserstein_reward(&pred, &target)?,
            cosine_reward(&pred, &target)?,
            borda_reward(&ranking_from_distribution(&pred), &ranking_from_distribution(&target))?,
        );
    }
    Ok(())
}
