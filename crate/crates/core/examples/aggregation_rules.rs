//! Applies every aggregation rule to the same rewards, then replays a few
//! rounds of the adaptive rule to show how its group weights move.

use appa::aggregation::{
    aggregate, effective_weights, fairness_index, finish_round, fixed_alpha_agg, Alpha, AggregationState,
    AggregationStrategy, AppaConfig,
};
use appa::domain::{GroupId, RewardMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let groups: Vec<GroupId> = ["north", "south", "east"].iter().map(|g| GroupId::new(*g)).collect::<Result<_, _>>()?;
    // rows are groups, columns are rollout items; "east" is served badly
    let rows = vec![vec![0.90, 0.85, 0.95], vec![0.88, 0.80, 0.92], vec![0.40, 0.55, 0.35]];
    let matrix = RewardMatrix::new(0, groups.clone(), rows)?;
    let cfg = AppaConfig::default();
    println!("fairness index {:.4}", fairness_index(&matrix, &cfg));

    let column = matrix.item_column(0);
    for a in [Alpha::NegInf, Alpha::Finite(-5.0), Alpha::Finite(0.0), Alpha::Finite(5.0), Alpha::PosInf] {
        println!("alpha {a:>5}: item 0 aggregate {:.4}", fixed_alpha_agg(a, &column)?);
    }

    let mut state = AggregationState::new(groups);
    for strategy in [AggregationStrategy::Average, AggregationStrategy::min(), AggregationStrategy::appa()] {
        let out = aggregate(&strategy, &matrix, &state)?;
        println!("{:<8} {:?} -> {:.4?}", strategy.label(), out.branch, out.rewards);
    }

    let strategy = AggregationStrategy::appa();
    for round in 0..5 {
        let out = aggregate(&strategy, &matrix, &state)?;
        state = finish_round(&state, &matrix, out.fi, &strategy.appa_config())?;
        println!(
            "round {round}: histories {:.3?} next weights {:.3?}",
            state.histories(),
            state.weights()
        );
    }
    println!("effective weights on item 0: {:.4?}", effective_weights(state.weights(), &column));
    Ok(())
}
