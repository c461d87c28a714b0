//! Renders predictions in the two response grammars, parses replies of
//! varying quality and blends metric and format into the final reward.

use appa::domain::{option_letters, Prediction, ProbDistribution, Ranking};
use appa::metrics::js_reward;
use appa::parsing::{blend_final_reward, parse_dpa, parse_opa, serialize_dpa, serialize_opa, DEFAULT_OMEGA};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = ProbDistribution::new(vec![0.5, 0.25, 0.25])?;
    let rendered = serialize_dpa(&ProbDistribution::new(vec![0.333, 0.333, 0.334])?);
    println!("rendered distribution: {rendered}");

    for reply in [rendered.as_str(), "0.5,0.3,0.3", "0.5,0.5", "1.2,-0.1,0.0", "no idea"] {
        let report = parse_dpa(reply, 3);
        let metric = match &report.parsed {
            Some(Prediction::Distribution(d)) => js_reward(d, &target)?,
            _ => 0.0,
        };
        let reward = blend_final_reward(metric, report.score, DEFAULT_OMEGA)?;
        println!("{reply:<14} format {:.3} metric {metric:.3} reward {reward:.3} issues {:?}", report.score, report.issues);
    }

    let letters = option_letters(4);
    println!("rendered ranking: {}", serialize_opa(&Ranking::new(vec![2, 0, 3, 1])?, &letters));
    for reply in ["C,A,D,B", "B,B,A,D", "A > C > B > D", "Z,Y"] {
        let report = parse_opa(reply, &letters);
        println!("{reply:<14} format {:.3} parsed {:?} issues {:?}", report.score, report.parsed, report.issues);
    }
    Ok(())
}
