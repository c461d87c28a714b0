//! One federated round by hand: sample a rollout, let every group score it
//! in-process, aggregate and inspect the reward matrix.

use appa::aggregation::{AggregationState, AggregationStrategy};
use appa::federation::{run_round, GroupClient, InProcessTransport, Transport};
use appa::harness::{generate_dataset, GeneratorSpec};
use appa::metrics::MetricKind;
use appa::policy::{rollout, PolicyConfig, ReferencePolicy, TabularPolicy, ValueTable};
use appa::domain::TaskMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_dataset(&GeneratorSpec {
        groups: 3,
        questions: 5,
        heterogeneity: 0.8,
        seed: 3,
        ..Default::default()
    })?;
    let policy = TabularPolicy::new(TaskMode::Dpa, data.questions(), PolicyConfig::default())?;
    let reference = ReferencePolicy::snapshot(&policy);
    let values = ValueTable::zeros(data.questions());
    let (_, broadcast) = rollout(&policy, &reference, &values, data.questions(), 0, 42)?;
    for item in &broadcast.items {
        println!("{} -> {}", item.question_id, item.response);
    }

    let mut transport = InProcessTransport::new(GroupClient::all_from_dataset(&data, MetricKind::Js, 0.85)?);
    let state = AggregationState::new(transport.groups());
    let outcome = run_round(&mut transport, &broadcast, &AggregationStrategy::appa(), &state)?;
    for (g, row) in outcome.matrix.groups().iter().zip(outcome.matrix.rows()) {
        println!("{g:<8} {row:.3?}");
    }
    println!("FI {:.4}, branch {:?}", outcome.fi, outcome.branch);
    println!("aggregated {:.3?}", outcome.aggregated);
    println!("histories after the round {:.3?}", outcome.next_state.histories());
    Ok(())
}
