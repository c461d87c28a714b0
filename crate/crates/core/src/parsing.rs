//! Response grammars for policy outputs and the format score.
//!
//! DPA answers are one line of `K` comma-separated two-decimal numbers
//! (`0.65,0.20,0.10,0.05`). OPA answers are one line of comma-separated
//! option letters (`B,C,A,D`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Prediction, ProbDistribution, Ranking, DEFAULT_MU_MIN};

/// Default weight of the metric reward in the blended training reward.
pub const DEFAULT_OMEGA: f64 = 0.85;

/// Accepted distance between the sum of parsed DPA values and 1.
pub const DPA_SUM_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatIssue {
    WrongCount,
    OutOfRange,
    BadSum,
    DuplicateLetter,
    UnknownLetter,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormatReport {
    pub score: f64,
    pub parsed: Option<Prediction>,
    pub issues: Vec<FormatIssue>,
}

impl FormatReport {
    fn unparseable() -> Self {
        Self {
            score: 0.0,
            parsed: None,
            issues: vec![FormatIssue::Unparseable],
        }
    }

    pub fn is_unparseable(&self) -> bool {
        self.issues.contains(&FormatIssue::Unparseable)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BlendError {
    #[error("omega {0} outside [0, 1]")]
    Omega(f64),
    #[error("{0} {1} outside [0, 1]")]
    Input(&'static str, f64),
}

/// Two-decimal rendering whose printed values always sum to exactly `1.00`.
///
/// Rounding drift is absorbed by the largest entry (lowest index on ties).
pub fn serialize_dpa(d: &ProbDistribution) -> String {
    let p = d.as_slice();
    let mut hundredths: Vec<i64> = p.iter().map(|v| (v * 100.0).round() as i64).collect();
    let drift = 100 - hundredths.iter().sum::<i64>();
    if drift != 0 {
        let largest = p
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > p[best] { i } else { best });
        hundredths[largest] = (hundredths[largest] + drift).max(0);
    }
    hundredths
        .iter()
        .map(|h| format!("{}.{:02}", h / 100, h % 100))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_decimal(token: &str) -> Option<f64> {
    let t = token.trim();
    let ok = !t.is_empty()
        && t.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if !ok {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a DPA response for a question with `k` options.
///
/// The score is the mean of three pass/fail checks: exactly `k` decimals,
/// all values in `[0, 1]`, sum within [`DPA_SUM_TOLERANCE`] of 1. A
/// renormalized distribution is returned when the count and range checks
/// pass.
pub fn parse_dpa(s: &str, k: usize) -> FormatReport {
    let tokens: Vec<&str> = s.trim().split(',').collect();
    let values: Vec<Option<f64>> = tokens.iter().map(|t| parse_decimal(t)).collect();
    let parsed: Vec<f64> = values.iter().flatten().copied().collect();
    if parsed.is_empty() {
        return FormatReport::unparseable();
    }

    let mut issues = Vec::new();
    let count_ok = parsed.len() == values.len() && parsed.len() == k;
    if !count_ok {
        issues.push(FormatIssue::WrongCount);
    }
    let range_ok = parsed.iter().all(|v| (0.0..=1.0).contains(v));
    if !range_ok {
        issues.push(FormatIssue::OutOfRange);
    }
    let sum: f64 = parsed.iter().sum();
    let sum_ok = (sum - 1.0).abs() <= DPA_SUM_TOLERANCE;
    if !sum_ok {
        issues.push(FormatIssue::BadSum);
    }

    let passed = [count_ok, range_ok, sum_ok].iter().filter(|b| **b).count();
    let dist = if count_ok && range_ok {
        ProbDistribution::renormalize(&parsed, DEFAULT_MU_MIN).ok()
    } else {
        None
    };
    if count_ok && range_ok && dist.is_none() {
        // all zeros: nothing to score against
        return FormatReport::unparseable();
    }
    FormatReport {
        score: passed as f64 / 3.0,
        parsed: dist.map(Prediction::Distribution),
        issues,
    }
}

/// Letters of `r` in rank order, comma-separated.
pub fn serialize_opa(r: &Ranking, labels: &[String]) -> String {
    r.as_slice()
        .iter()
        .map(|&i| labels[i].as_str())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses an OPA response against the question's option letters.
///
/// The score is the number of valid, first-occurrence letters divided by
/// `max(K, tokens emitted)`, so extra tokens cost as much as missing ones.
/// A ranking is returned only for a clean, complete permutation.
pub fn parse_opa(s: &str, labels: &[String]) -> FormatReport {
    let k = labels.len();
    let trimmed = s.trim();
    if trimmed.is_empty() || k == 0 {
        return FormatReport::unparseable();
    }
    let tokens: Vec<&str> = trimmed.split(',').map(str::trim).collect();
    let mut seen = BTreeSet::new();
    let mut order = Vec::with_capacity(k);
    let mut issues = BTreeSet::new();
    for t in &tokens {
        match labels.iter().position(|l| l == t) {
            Some(i) if seen.insert(i) => order.push(i),
            Some(_) => {
                issues.insert(FormatIssue::DuplicateLetter);
            }
            None => {
                issues.insert(FormatIssue::UnknownLetter);
            }
        }
    }
    if order.is_empty() {
        return FormatReport::unparseable();
    }
    if tokens.len() != k {
        issues.insert(FormatIssue::WrongCount);
    }
    let score = order.len() as f64 / k.max(tokens.len()) as f64;
    let parsed = if issues.is_empty() && order.len() == k {
        Ranking::new(order).ok().map(Prediction::Ranking)
    } else {
        None
    };
    FormatReport {
        score,
        parsed,
        issues: issues.into_iter().collect(),
    }
}

/// `omega * metric_reward + (1 - omega) * format_score`.
pub fn blend_final_reward(
    metric_reward: f64,
    format_score: f64,
    omega: f64,
) -> Result<f64, BlendError> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(BlendError::Omega(omega));
    }
    if !(0.0..=1.0).contains(&metric_reward) {
        return Err(BlendError::Input("metric reward", metric_reward));
    }
    if !(0.0..=1.0).contains(&format_score) {
        return Err(BlendError::Input("format score", format_score));
    }
    Ok((omega * metric_reward + (1.0 - omega) * format_score).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::option_letters;

    fn d(p: &[f64]) -> ProbDistribution {
        ProbDistribution::new(p.to_vec()).unwrap()
    }

    fn dist_of(report: &FormatReport) -> Vec<f64> {
        match &report.parsed {
            Some(Prediction::Distribution(p)) => p.as_slice().to_vec(),
            other => panic!("expected distribution, got {other:?}"),
        }
    }

    #[test]
    fn serialize_dpa_examples() {
        assert_eq!(serialize_dpa(&d(&[0.65, 0.20, 0.10, 0.05])), "0.65,0.20,0.10,0.05");
        assert_eq!(serialize_dpa(&d(&[1.0, 0.0])), "1.00,0.00");
        let third = 1.0 / 3.0;
        let s = serialize_dpa(&d(&[third, third, third]));
        assert_eq!(s, "0.34,0.33,0.33");
        let printed: f64 = s.split(',').map(|t| t.parse::<f64>().unwrap()).sum();
        assert!((printed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn serialize_dpa_fixes_overshoot() {
        // 0.125 * 8 rounds to 13 hundredths each in round-half-away mode
        let s = serialize_dpa(&d(&[0.125; 8]));
        let total: i64 = s
            .split(',')
            .map(|t| (t.parse::<f64>().unwrap() * 100.0).round() as i64)
            .sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn parse_dpa_examples() {
        let ok = parse_dpa("0.65,0.20,0.10,0.05", 4);
        assert_eq!(ok.score, 1.0);
        assert!(ok.issues.is_empty());
        for (a, b) in dist_of(&ok).iter().zip([0.65, 0.20, 0.10, 0.05]) {
            assert!((a - b).abs() < 1e-12);
        }

        let bad = parse_dpa("garbage", 4);
        assert_eq!(bad.score, 0.0);
        assert!(bad.parsed.is_none());
        assert_eq!(bad.issues, vec![FormatIssue::Unparseable]);

        let over = parse_dpa("0.50,0.50,0.50", 3);
        assert!((over.score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(over.issues, vec![FormatIssue::BadSum]);
        for v in dist_of(&over) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_dpa_partial_failures() {
        let wrong_count = parse_dpa("0.5,0.5", 3);
        assert!((wrong_count.score - 2.0 / 3.0).abs() < 1e-15);
        assert!(wrong_count.parsed.is_none());
        assert_eq!(wrong_count.issues, vec![FormatIssue::WrongCount]);

        let out_of_range = parse_dpa("1.5,-0.5", 2);
        assert_eq!(out_of_range.issues, vec![FormatIssue::OutOfRange]);
        assert!(out_of_range.parsed.is_none());

        let junk_token = parse_dpa("0.5,abc", 2);
        assert!(junk_token.issues.contains(&FormatIssue::WrongCount));
        assert!(junk_token.parsed.is_none());

        assert!(parse_dpa("0.00,0.00", 2).is_unparseable());
        assert!(parse_dpa("nan,inf", 2).is_unparseable());
    }

    #[test]
    fn opa_examples() {
        let labels = option_letters(4);
        let r = Ranking::new(vec![1, 2, 0, 3]).unwrap();
        assert_eq!(serialize_opa(&r, &labels), "B,C,A,D");
        assert_eq!(serialize_opa(&Ranking::identity(2), &option_letters(2)), "A,B");
        assert_eq!(
            serialize_opa(&Ranking::new(vec![2, 1, 0]).unwrap(), &option_letters(3)),
            "C,B,A"
        );

        let ok = parse_opa("B,C,A,D", &labels);
        assert_eq!(ok.score, 1.0);
        assert_eq!(ok.parsed, Some(Prediction::Ranking(r)));
        assert!(ok.issues.is_empty());

        let dup = parse_opa("B,B,A,D", &labels);
        assert_eq!(dup.score, 0.75);
        assert!(dup.parsed.is_none());
        assert_eq!(dup.issues, vec![FormatIssue::DuplicateLetter]);

        let empty = parse_opa("", &labels);
        assert_eq!(empty.score, 0.0);
        assert!(empty.is_unparseable());
    }

    #[test]
    fn opa_extra_and_unknown_tokens() {
        let labels = option_letters(3);
        let extra = parse_opa("A,B,C,A", &labels);
        assert_eq!(extra.score, 0.75);
        assert!(extra.parsed.is_none());
        let unknown = parse_opa("A,Z,C", &labels);
        assert!((unknown.score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(unknown.issues, vec![FormatIssue::UnknownLetter]);
        assert!(parse_opa("X,Y,Z", &labels).is_unparseable());
    }

    #[test]
    fn blend_examples() {
        assert_eq!(blend_final_reward(1.0, 1.0, 0.85).unwrap(), 1.0);
        assert!((blend_final_reward(0.8, 1.0, 0.85).unwrap() - 0.83).abs() < 1e-12);
        assert_eq!(blend_final_reward(0.0, 0.0, 0.85).unwrap(), 0.0);
        assert_eq!(blend_final_reward(0.5, 0.5, 1.5), Err(BlendError::Omega(1.5)));
        assert!(blend_final_reward(1.2, 0.5, 0.85).is_err());
    }
}
