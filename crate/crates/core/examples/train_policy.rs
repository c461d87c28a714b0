//! Trains one policy with the adaptive rule, prints a few training log
//! lines and the held-out report, then saves and reloads a checkpoint.

use appa::harness::{evaluate_policy, run_experiment, DataSource, ExperimentConfig, GeneratorSpec};
use appa::policy::{load_checkpoint, save_checkpoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig {
        data: DataSource::Generate(GeneratorSpec {
            groups: 4,
            questions: 30,
            heterogeneity: 0.7,
            concentration: 10.0,
            sharpness: [0.05, 1.0],
            ..Default::default()
        }),
        iterations: 60,
        rollouts_per_question: 4,
        ..Default::default()
    };
    cfg.ppo.learning_rate = 0.05;
    let data = cfg.dataset()?;
    let mut transport = cfg.in_process_transport(&data)?;
    let (record, policy, values) = run_experiment(&cfg, &data, &cfg.strategy, 0, &mut transport, None)?;
    for log in record.log.iter().step_by(10) {
        println!(
            "iteration {:>3} FI {:.4} {:<8?} mean KL {:.4} loss {:.4}",
            log.iteration, log.fi, log.branch, log.mean_kl, log.losses.total_loss
        );
    }
    println!("{}", serde_json::to_string_pretty(&record.report)?);

    let path = std::env::temp_dir().join("appa-checkpoint.json");
    save_checkpoint(&path, &policy, &values)?;
    let (mut restored, mut restored_values) = cfg.initial_policy(&data)?;
    load_checkpoint(&path, &mut restored, &mut restored_values)?;
    let again = evaluate_policy(&restored, &data, cfg.metric, &cfg.strategy.appa_config(), None)?;
    println!("reloaded checkpoint reproduces the report: {}", again == record.report);
    Ok(())
}
