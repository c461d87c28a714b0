use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::aggregation::{fairness_index, AppaConfig};
use crate::domain::{option_letters, GroupId, PreferenceDataset, Prediction, ProbDistribution, RewardMatrix, TaskMode};
use crate::metrics::{self, MetricKind};
use crate::parsing::{parse_dpa, parse_opa, serialize_dpa, serialize_opa};
use crate::policy::TabularPolicy;

/// Held-out performance of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Alignment score per group, also the spider-plot values.
    pub as_by_group: BTreeMap<String, f64>,
    pub avg_as: f64,
    pub min_as: f64,
    /// Fairness index of the raw metric rewards on the test questions.
    pub fi: f64,
    pub format_score: f64,
    pub test_questions: usize,
}

/// Mean raw metric reward of `outputs` against one group's targets over
/// the listed questions.
pub fn group_alignment_score(
    outputs: &BTreeMap<String, Prediction>,
    targets: &BTreeMap<String, ProbDistribution>,
    questions: &[String],
    metric: MetricKind,
) -> Result<f64, HarnessError> {
    if questions.is_empty() {
        return Err(HarnessError::Empty("no test questions"));
    }
    let mut total = 0.0;
    for q in questions {
        let out = outputs.get(q).ok_or_else(|| HarnessError::MissingOutput(q.clone()))?;
        let target = targets.get(q).ok_or_else(|| HarnessError::MissingOutput(q.clone()))?;
        total += metrics::score(metric, out, target)?;
    }
    Ok(total / questions.len() as f64)
}

/// `(mean, minimum)` over groups.
pub fn summarize(as_by_group: &BTreeMap<String, f64>) -> Result<(f64, f64), HarnessError> {
    if as_by_group.is_empty() {
        return Err(HarnessError::Empty("no groups"));
    }
    let n = as_by_group.len() as f64;
    let avg = as_by_group.values().sum::<f64>() / n;
    let min = as_by_group.values().copied().fold(f64::INFINITY, f64::min);
    // the mean of equal values can drift one ulp above them
    Ok((avg.max(min), min))
}

/// Decodes the policy on every test question (greedy unless a sampling
/// seed is given), scores the outputs the way a group would see them and
/// summarizes per group.
pub fn evaluate_policy(
    policy: &TabularPolicy,
    dataset: &PreferenceDataset,
    metric: MetricKind,
    fi_config: &AppaConfig,
    sampling_seed: Option<u64>,
) -> Result<EvaluationReport, HarnessError> {
    let test = dataset.test_questions();
    if test.is_empty() {
        return Err(HarnessError::Empty("no test questions"));
    }
    let mut rng = sampling_seed.map(ChaCha8Rng::seed_from_u64);
    let mut outputs = BTreeMap::new();
    let mut format_total = 0.0;
    for q in &test {
        let actions = match rng.as_mut() {
            Some(r) => policy.sample_episode(&q.id, r)?,
            None => policy.greedy_episode(&q.id)?,
        };
        let pred = policy.decode(&actions)?;
        let report = match (&pred, policy.mode()) {
            (Prediction::Distribution(d), TaskMode::Dpa) => parse_dpa(&serialize_dpa(d), q.num_options()),
            (Prediction::Ranking(r), TaskMode::Opa) => {
                let letters = option_letters(q.num_options());
                parse_opa(&serialize_opa(r, &letters), &letters)
            }
            _ => unreachable!("policy decodes in its own mode"),
        };
        format_total += report.score;
        outputs.insert(q.id.clone(), report.parsed.unwrap_or(pred));
    }
    let ids: Vec<String> = test.iter().map(|q| q.id.clone()).collect();
    let mut as_by_group = BTreeMap::new();
    let mut rows = Vec::new();
    for g in dataset.groups() {
        let targets = dataset
            .group_targets(g)
            .ok_or_else(|| HarnessError::MissingOutput(g.to_string()))?;
        let row = ids
            .iter()
            .map(|q| metrics::score(metric, &outputs[q], &targets[q]))
            .collect::<Result<Vec<_>, _>>()?;
        as_by_group.insert(g.to_string(), group_alignment_score(&outputs, targets, &ids, metric)?);
        rows.push(row);
    }
    let groups: Vec<GroupId> = dataset.groups().to_vec();
    let matrix = RewardMatrix::new(0, groups, rows)?;
    let (avg_as, min_as) = summarize(&as_by_group)?;
    Ok(EvaluationReport {
        as_by_group,
        avg_as,
        min_as,
        fi: fairness_index(&matrix, fi_config),
        format_score: format_total / test.len() as f64,
        test_questions: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Question;
    use crate::policy::PolicyConfig;

    fn d(p: &[f64]) -> ProbDistribution {
        ProbDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn alignment_score_examples() {
        let t: BTreeMap<String, ProbDistribution> =
            [("a".to_string(), d(&[1.0, 0.0])), ("b".to_string(), d(&[0.0, 1.0]))].into();
        let perfect: BTreeMap<String, Prediction> = t
            .iter()
            .map(|(k, v)| (k.clone(), Prediction::Distribution(v.clone())))
            .collect();
        let ids = vec!["a".to_string(), "b".to_string()];
        assert_eq!(group_alignment_score(&perfect, &t, &ids, MetricKind::Js).unwrap(), 1.0);
        let half: BTreeMap<String, Prediction> = [
            ("a".to_string(), Prediction::Distribution(d(&[1.0, 0.0]))),
            ("b".to_string(), Prediction::Distribution(d(&[1.0, 0.0]))),
        ]
        .into();
        assert_eq!(group_alignment_score(&half, &t, &ids, MetricKind::Js).unwrap(), 0.5);
        assert!(group_alignment_score(&half, &t, &[], MetricKind::Js).is_err());
        assert!(matches!(
            group_alignment_score(&BTreeMap::new(), &t, &ids, MetricKind::Js),
            Err(HarnessError::MissingOutput(_))
        ));
    }

    #[test]
    fn summarize_examples() {
        let m: BTreeMap<String, f64> = [("A".into(), 0.8), ("B".into(), 0.6)].into();
        let (avg, min) = summarize(&m).unwrap();
        assert!((avg - 0.7).abs() < 1e-15 && min == 0.6);
        let one: BTreeMap<String, f64> = [("A".into(), 0.37)].into();
        assert_eq!(summarize(&one).unwrap(), (0.37, 0.37));
        // per-question rewards [[1,0],[0,1]]: each group averages 0.5
        let pq: BTreeMap<String, f64> = [("A".into(), (1.0 + 0.0) / 2.0), ("B".into(), (0.0 + 1.0) / 2.0)].into();
        assert_eq!(summarize(&pq).unwrap(), (0.5, 0.5));
        assert!(summarize(&BTreeMap::new()).is_err());
    }

    #[test]
    fn identical_groups_have_unit_fi_and_evaluation_skips_train_questions() {
        let qs: Vec<Question> = (0..5)
            .map(|i| Question::new(format!("q{i}"), option_letters(3)).unwrap())
            .collect();
        let groups: Vec<GroupId> = ["x", "y"].iter().map(|g| GroupId::new(*g).unwrap()).collect();
        let targets = groups
            .iter()
            .map(|g| {
                (
                    g.clone(),
                    qs.iter().map(|q| (q.id.clone(), d(&[0.5, 0.3, 0.2]))).collect(),
                )
            })
            .collect();
        let ds = PreferenceDataset::new(qs.clone(), groups, targets)
            .unwrap()
            .with_ratio_split(0.6, 1)
            .unwrap();
        let policy = TabularPolicy::new(TaskMode::Dpa, &qs, PolicyConfig::default()).unwrap();
        let r = evaluate_policy(&policy, &ds, MetricKind::Js, &AppaConfig::default(), None).unwrap();
        assert_eq!(r.fi, 1.0);
        assert_eq!(r.test_questions, 2);
        assert_eq!(r.format_score, 1.0);
        assert_eq!(r.avg_as, r.min_as);
    }
}
