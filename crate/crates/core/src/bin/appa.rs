use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use appa::aggregation::AggregationStrategy;
use appa::federation::tcp::{serve_client, TcpTransport};
use appa::federation::{GroupClient, Transport, DEFAULT_TCP_DEADLINE};
use appa::harness::{
    compare_strategies, evaluate_policy, generate_dataset, load_dataset, run_experiment, save_dataset, DataSource,
    ExperimentConfig, RunRecord,
};
use appa::metrics::MetricKind;
use appa::parsing::DEFAULT_OMEGA;
use appa::policy::{load_checkpoint, save_checkpoint, IterationLog};

#[derive(Parser)]
#[command(name = "appa", version, about = "Fair reward aggregation for federated preference alignment")]
struct Cli {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = TransportKind::Inproc)]
    transport: TransportKind,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    Inproc,
    Tcp,
}

#[derive(clap::Args)]
struct TcpArgs {
    /// Address the trainer listens on for group clients.
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Start one TCP client per group inside this process.
    #[arg(long)]
    spawn_clients: bool,
    /// Seconds to wait for connections and for each round's reports.
    #[arg(long, default_value_t = DEFAULT_TCP_DEADLINE.as_secs())]
    deadline_secs: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file from the config's generator spec.
    GenData,
    /// Train one policy and evaluate it on the test split.
    Train {
        #[command(flatten)]
        tcp: TcpArgs,
    },
    /// Evaluate a saved checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate several strategies over several seeds.
    Compare {
        /// Comma-separated strategies, e.g. `appa,average,min,alpha=-1`.
        #[arg(long, value_delimiter = ',', default_value = "appa,average,min")]
        strategies: Vec<AggregationStrategy>,
        /// Number of seeds, counted up from the base seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Run a group client that scores rollouts from a trainer over TCP.
    ServeClient {
        #[arg(long)]
        server: String,
        #[arg(long)]
        group: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = MetricKind::Js)]
        metric: MetricKind,
        #[arg(long, default_value_t = DEFAULT_OMEGA)]
        omega: f64,
    },
    /// Dump per-iteration FI and weights, from an existing training log or
    /// from a fresh training run.
    DiagnoseWeights {
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn train_once(cli: &Cli, cfg: &ExperimentConfig, tcp: Option<&TcpArgs>) -> Result<RunRecord> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let dataset = cfg.dataset()?;
    let log_path = out.join("train_log.jsonl");
    let mut transport: Box<dyn Transport> = match (cli.transport, tcp) {
        (TransportKind::Inproc, _) => Box::new(cfg.in_process_transport(&dataset)?),
        (TransportKind::Tcp, None) => bail!("this command has no TCP options"),
        (TransportKind::Tcp, Some(t)) => {
            let listener = TcpListener::bind(&t.listen).with_context(|| format!("binding {}", t.listen))?;
            let addr = listener.local_addr()?;
            info!("waiting for {} groups on {addr}", dataset.groups().len());
            let deadline = Duration::from_secs(t.deadline_secs);
            if t.spawn_clients {
                for client in GroupClient::all_from_dataset(&dataset, cfg.metric, cfg.omega)? {
                    std::thread::spawn(move || {
                        if let Err(e) = serve_client(addr, &client, deadline) {
                            log::error!("client {} stopped: {e}", client.group());
                        }
                    });
                }
            }
            Box::new(TcpTransport::accept(&listener, dataset.groups(), deadline)?)
        }
    };
    let (record, policy, values) = run_experiment(
        cfg,
        &dataset,
        &cfg.strategy,
        cfg.seed,
        transport.as_mut(),
        Some(&log_path),
    )?;
    transport.shutdown()?;
    save_checkpoint(&out.join("checkpoint.json"), &policy, &values)?;
    write_json(&out.join("report.json"), &record.report)?;
    cfg.save(&out.join("config.json"))?;
    Ok(record)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData => {
            let cfg = load_config(&cli)?;
            let DataSource::Generate(spec) = &cfg.data else {
                bail!("gen-data needs a generator spec in the config's `data` field");
            };
            let dataset = generate_dataset(spec)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("dataset.ndjson");
            save_dataset(&dataset, &path)?;
            println!("wrote {} questions for {} groups to {}", dataset.questions().len(), dataset.groups().len(), path.display());
        }
        Command::Train { tcp } => {
            let cfg = load_config(&cli)?;
            let record = train_once(&cli, &cfg, Some(tcp))?;
            println!("{}", serde_json::to_string_pretty(&record.report)?);
        }
        Command::Evaluate { checkpoint } => {
            let cfg = load_config(&cli)?;
            let dataset = cfg.dataset()?;
            let (mut policy, mut values) = cfg.initial_policy(&dataset)?;
            load_checkpoint(checkpoint, &mut policy, &mut values)?;
            let sampling = cfg.eval_sampling.then_some(cfg.seed);
            let report = evaluate_policy(&policy, &dataset, cfg.metric, &cfg.strategy.appa_config(), sampling)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("report.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Compare { strategies, seeds } => {
            let cfg = load_config(&cli)?;
            if cli.transport == TransportKind::Tcp {
                bail!("compare runs many trainings at once and only supports --transport inproc");
            }
            let dataset = cfg.dataset()?;
            let seeds: Vec<u64> = (0..*seeds).map(|i| cfg.seed + i).collect();
            let cmp = compare_strategies(&cfg, &dataset, strategies, &seeds, Some(&cfg.output_dir))?;
            cmp.write_all(&cfg.output_dir)?;
            for s in cmp.summary() {
                println!(
                    "{:<12} fi {:.4} [{:.4}, {:.4}]  avg_as {:.4} [{:.4}, {:.4}]  min_as {:.4} [{:.4}, {:.4}]",
                    s.strategy, s.fi.mean, s.fi.min, s.fi.max, s.avg_as.mean, s.avg_as.min, s.avg_as.max,
                    s.min_as.mean, s.min_as.min, s.min_as.max
                );
            }
            println!("reports in {}", cfg.output_dir.display());
        }
        Command::ServeClient {
            server,
            group,
            dataset,
            metric,
            omega,
        } => {
            let data = load_dataset(dataset)?;
            let group = appa::domain::GroupId::new(group.clone())?;
            let client = GroupClient::from_dataset(&data, &group, *metric, *omega)?;
            serve_client(server.as_str(), &client, DEFAULT_TCP_DEADLINE)?;
        }
        Command::DiagnoseWeights { log } => {
            let cfg = load_config(&cli)?;
            let entries: Vec<IterationLog> = match log {
                Some(p) => std::fs::read_to_string(p)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<Result<_, _>>()?,
                None => train_once(&cli, &cfg, None)?.log,
            };
            let trace: Vec<_> = entries
                .iter()
                .map(|l| serde_json::json!({"iteration": l.iteration, "fi": l.fi, "branch": l.branch, "weights": l.weights, "histories": l.histories}))
                .collect();
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("weight_trace.json");
            write_json(&path, &trace)?;
            for l in &entries {
                let w: Vec<String> = l.weights.values().map(|w| format!("{w:.3}")).collect();
                println!("{:>5} fi {:.4} {:<8?} [{}]", l.iteration, l.fi, l.branch, w.join(" "));
            }
            println!("trace written to {}", path.display());
        }
    }
    Ok(())
}
