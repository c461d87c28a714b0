//! Reward metrics comparing a policy output with a group target.
//!
//! All four rewards are normalized to `[0, 1]`, higher is better. JS,
//! Wasserstein and cosine compare distributions (DPA); Borda compares
//! rankings (OPA).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ranking_from_distribution, Prediction, ProbDistribution, Ranking, TaskMode};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: prediction has {pred} options, target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("wasserstein reward needs at least 2 options")]
    SingleOption,
    #[error("metric {metric} does not apply to {mode} outputs")]
    WrongTask { metric: MetricKind, mode: TaskMode },
    #[error("unknown metric {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Js,
    Wasserstein,
    Cosine,
    Borda,
}

impl MetricKind {
    pub fn task_mode(self) -> TaskMode {
        match self {
            MetricKind::Borda => TaskMode::Opa,
            _ => TaskMode::Dpa,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Js => "js",
            MetricKind::Wasserstein => "wasserstein",
            MetricKind::Cosine => "cosine",
            MetricKind::Borda => "borda",
        })
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "js" => Ok(MetricKind::Js),
            "wasserstein" | "was" => Ok(MetricKind::Wasserstein),
            "cosine" | "cos" => Ok(MetricKind::Cosine),
            "borda" | "bor" => Ok(MetricKind::Borda),
            _ => Err(MetricError::Unknown(s.to_string())),
        }
    }
}

fn check_len(pred: usize, target: usize) -> Result<(), MetricError> {
    if pred != target {
        return Err(MetricError::LengthMismatch { pred, target });
    }
    Ok(())
}

/// `sum p log2(p / q)`, skipping `p = 0` terms.
fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).log2())
        .sum()
}

/// `1 - JSD(pred || target)` with base-2 logarithms.
pub fn js_reward(pred: &ProbDistribution, target: &ProbDistribution) -> Result<f64, MetricError> {
    check_len(pred.len(), target.len())?;
    let (p, q) = (pred.as_slice(), target.as_slice());
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let jsd = 0.5 * kl_bits(p, &m) + 0.5 * kl_bits(q, &m);
    Ok((1.0 - jsd).clamp(0.0, 1.0))
}

/// `1 - W1 / (K - 1)` with options on the integer line `0..K`.
pub fn wasserstein_reward(
    pred: &ProbDistribution,
    target: &ProbDistribution,
) -> Result<f64, MetricError> {
    check_len(pred.len(), target.len())?;
    let k = pred.len();
    if k < 2 {
        return Err(MetricError::SingleOption);
    }
    let (mut cdf_p, mut cdf_q, mut w1) = (0.0, 0.0, 0.0);
    // the last CDF difference is always 0
    for (a, b) in pred.as_slice()[..k - 1].iter().zip(target.as_slice()) {
        cdf_p += a;
        cdf_q += b;
        w1 += (cdf_p - cdf_q).abs();
    }
    Ok((1.0 - w1 / (k - 1) as f64).clamp(0.0, 1.0))
}

/// `(1 + cos(pred, target)) / 2`.
pub fn cosine_reward(
    pred: &ProbDistribution,
    target: &ProbDistribution,
) -> Result<f64, MetricError> {
    check_len(pred.len(), target.len())?;
    let (p, q) = (pred.as_slice(), target.as_slice());
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = (dot / (np * nq)).clamp(-1.0, 1.0);
    Ok(0.5 * (1.0 + cos))
}

/// Position-weighted agreement: position `k` (0-based) is worth `K - k`,
/// normalized by `K (K + 1) / 2`.
pub fn borda_reward(pred: &Ranking, target: &Ranking) -> Result<f64, MetricError> {
    check_len(pred.len(), target.len())?;
    let k = pred.len();
    let hits: usize = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .enumerate()
        .filter(|(_, (a, b))| a == b)
        .map(|(pos, _)| k - pos)
        .sum();
    Ok(hits as f64 / (k * (k + 1) / 2) as f64)
}

/// Scores a parsed prediction against a group's target distribution. OPA
/// targets are turned into rankings first.
pub fn score(
    metric: MetricKind,
    pred: &Prediction,
    target: &ProbDistribution,
) -> Result<f64, MetricError> {
    match (metric, pred) {
        (MetricKind::Js, Prediction::Distribution(p)) => js_reward(p, target),
        (MetricKind::Wasserstein, Prediction::Distribution(p)) => wasserstein_reward(p, target),
        (MetricKind::Cosine, Prediction::Distribution(p)) => cosine_reward(p, target),
        (MetricKind::Borda, Prediction::Ranking(r)) => {
            borda_reward(r, &ranking_from_distribution(target))
        }
        (metric, Prediction::Distribution(_)) => Err(MetricError::WrongTask {
            metric,
            mode: TaskMode::Dpa,
        }),
        (metric, Prediction::Ranking(_)) => Err(MetricError::WrongTask {
            metric,
            mode: TaskMode::Opa,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(p: &[f64]) -> ProbDistribution {
        ProbDistribution::new(p.to_vec()).unwrap()
    }

    fn r(o: &[usize]) -> Ranking {
        Ranking::new(o.to_vec()).unwrap()
    }

    #[test]
    fn js_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(js_reward(&p, &p).unwrap(), 1.0);
        assert_eq!(js_reward(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 0.0);
        // mixture [0.75, 0.25]; JSD = 1 - 0.75 log2(4/3)... evaluated by hand
        let got = js_reward(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap();
        let jsd = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2())
            + 0.5 * (1.0f64 / 0.75).log2();
        assert!((got - (1.0 - jsd)).abs() < 1e-12);
        assert!((got - 0.68872).abs() < 1e-5);
    }

    #[test]
    fn wasserstein_examples() {
        let p = d(&[0.1, 0.6, 0.3]);
        assert_eq!(wasserstein_reward(&p, &p).unwrap(), 1.0);
        assert_eq!(
            wasserstein_reward(&d(&[1.0, 0.0, 0.0]), &d(&[0.0, 0.0, 1.0])).unwrap(),
            0.0
        );
        let got = wasserstein_reward(&d(&[0.6, 0.4]), &d(&[0.4, 0.6])).unwrap();
        assert!((got - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cosine_examples() {
        let p = d(&[0.25, 0.75]);
        assert!((cosine_reward(&p, &p).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_reward(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 0.5);
        let got = cosine_reward(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap();
        assert!((got - (1.0 + 0.5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((got - 0.85355).abs() < 1e-5);
    }

    #[test]
    fn borda_examples() {
        assert_eq!(borda_reward(&r(&[2, 0, 1]), &r(&[2, 0, 1])).unwrap(), 1.0);
        assert_eq!(borda_reward(&r(&[0, 1, 2]), &r(&[0, 2, 1])).unwrap(), 0.5);
        assert_eq!(borda_reward(&r(&[0, 1, 2]), &r(&[1, 2, 0])).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (a, b) = (d(&[0.5, 0.5]), d(&[0.2, 0.3, 0.5]));
        let want = Err(MetricError::LengthMismatch { pred: 2, target: 3 });
        assert_eq!(js_reward(&a, &b), want);
        assert_eq!(wasserstein_reward(&a, &b), want);
        assert_eq!(cosine_reward(&a, &b), want);
        assert_eq!(borda_reward(&r(&[0, 1]), &r(&[0, 1, 2])), want);
    }

    #[test]
    fn score_checks_task_compatibility() {
        let t = d(&[0.7, 0.2, 0.1]);
        let ranking = Prediction::Ranking(r(&[0, 1, 2]));
        assert_eq!(score(MetricKind::Borda, &ranking, &t).unwrap(), 1.0);
        assert!(matches!(
            score(MetricKind::Js, &ranking, &t),
            Err(MetricError::WrongTask { .. })
        ));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [MetricKind::Js, MetricKind::Wasserstein, MetricKind::Cosine, MetricKind::Borda] {
            assert_eq!(m.to_string().parse::<MetricKind>().unwrap(), m);
        }
    }
}
