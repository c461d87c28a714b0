//! Trains over real sockets: each group runs as its own client thread and
//! talks to the trainer through the line-delimited JSON protocol. The run
//! is checked against an in-process run with the same seed.

use std::net::TcpListener;
use std::time::Duration;

use appa::federation::tcp::{serve_client, TcpTransport};
use appa::federation::{GroupClient, Transport};
use appa::harness::{DataSource, ExperimentConfig, GeneratorSpec};
use appa::policy::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        data: DataSource::Generate(GeneratorSpec {
            groups: 3,
            questions: 12,
            heterogeneity: 0.6,
            ..Default::default()
        }),
        iterations: 10,
        ..Default::default()
    };
    let data = cfg.dataset()?;
    let questions: Vec<_> = data.train_questions().into_iter().cloned().collect();

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let deadline = Duration::from_secs(10);
    let clients: Vec<_> = GroupClient::all_from_dataset(&data, cfg.metric, cfg.omega)?
        .into_iter()
        .map(|c| std::thread::spawn(move || serve_client(addr, &c, deadline)))
        .collect();
    let mut tcp = TcpTransport::accept(&listener, data.groups(), deadline)?;
    println!("{} groups connected on {addr}", data.groups().len());

    let train_cfg = cfg.train_config(&cfg.strategy, cfg.seed);
    let (mut p, mut v) = cfg.initial_policy(&data)?;
    let over_tcp = train(&mut p, &mut v, &questions, &mut tcp, &train_cfg, |log, _| {
        println!("iteration {} FI {:.4} {:?}", log.iteration, log.fi, log.branch);
        Ok(())
    })?;
    tcp.shutdown()?;
    for c in clients {
        c.join().expect("client thread")?;
    }

    let (mut p, mut v) = cfg.initial_policy(&data)?;
    let local = train(&mut p, &mut v, &questions, &mut cfg.in_process_transport(&data)?, &train_cfg, |_, _| Ok(()))?;
    println!("identical to the in-process run: {}", over_tcp.to_jsonl() == local.to_jsonl());
    Ok(())
}
