use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{GeneratorSpec, HarnessError};
use crate::domain::{option_letters, GroupId, PreferenceDataset, ProbDistribution, Question};

const LOAD_SUM_TOLERANCE: f64 = 1e-3;

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub question_id: String,
    pub options: Vec<String>,
    pub targets: BTreeMap<String, Vec<f64>>,
}

fn dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|x| x / sum).collect();
        }
    }
}

fn around<R: Rng>(profile: &[f64], concentration: f64, rng: &mut R) -> Vec<f64> {
    // floor keeps every shape strictly positive
    let alpha: Vec<f64> = profile.iter().map(|p| concentration * p + 0.05).collect();
    dirichlet(&alpha, rng)
}

/// Synthetic dataset; see [`GeneratorSpec`] for the model.
pub fn generate_dataset(spec: &GeneratorSpec) -> Result<PreferenceDataset, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = (spec.groups.max(spec.questions)).to_string().len();
    let groups: Vec<GroupId> = (0..spec.groups)
        .map(|g| GroupId::new(format!("group{g:0width$}")))
        .collect::<Result<_, _>>()?;
    let sizes: Vec<usize> = (spec.min_options..=spec.max_options).collect();
    let [lo, hi] = spec.sharpness;
    let mut sharpness: Vec<f64> = (0..spec.groups)
        .map(|g| {
            let f = if spec.groups == 1 { 0.5 } else { g as f64 / (spec.groups - 1) as f64 };
            (lo.ln() + f * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    sharpness.shuffle(&mut rng);
    let mut common = BTreeMap::new();
    let mut own: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for &k in &sizes {
        common.insert(k, dirichlet(&vec![1.0; k], &mut rng));
        for (g, &a) in sharpness.iter().enumerate() {
            own.insert((g, k), dirichlet(&vec![a; k], &mut rng));
        }
    }
    let eta = spec.heterogeneity;
    let mut questions = Vec::with_capacity(spec.questions);
    let mut targets: BTreeMap<GroupId, BTreeMap<String, ProbDistribution>> =
        groups.iter().map(|g| (g.clone(), BTreeMap::new())).collect();
    for j in 0..spec.questions {
        let k = sizes[rng.random_range(0..sizes.len())];
        let id = format!("q{j:0width$}");
        questions.push(Question::new(id.clone(), option_letters(k))?);
        let base = around(&common[&k], spec.concentration, &mut rng);
        for (g, name) in groups.iter().enumerate() {
            let draw = around(&own[&(g, k)], spec.concentration, &mut rng);
            let mixed: Vec<f64> = base
                .iter()
                .zip(&draw)
                .map(|(b, d)| (1.0 - eta) * b + eta * d)
                .collect();
            let target = ProbDistribution::renormalize(&mixed, 0.0)?;
            targets.get_mut(name).expect("known group").insert(id.clone(), target);
        }
    }
    Ok(PreferenceDataset::new(questions, groups, targets)?)
}

/// Writes one JSON object per question.
pub fn save_dataset(dataset: &PreferenceDataset, path: &Path) -> Result<(), HarnessError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for q in dataset.questions() {
        let targets = dataset
            .groups()
            .iter()
            .map(|g| {
                let t = dataset.target(g, &q.id).expect("validated dataset");
                (g.to_string(), t.as_slice().to_vec())
            })
            .collect();
        let rec = DatasetRecord {
            question_id: q.id.clone(),
            options: q.option_labels.clone(),
            targets,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset file. Target sums within 1e-3 of one are renormalized;
/// anything further off is rejected. Blank lines are skipped. The split is
/// all-train until one is applied.
pub fn load_dataset(path: &Path) -> Result<PreferenceDataset, HarnessError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut questions = Vec::new();
    let mut groups: Vec<GroupId> = Vec::new();
    let mut targets: BTreeMap<GroupId, BTreeMap<String, ProbDistribution>> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| HarnessError::Dataset { line: n + 1, reason };
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let q = Question::new(rec.question_id.clone(), rec.options).map_err(|e| bad(e.to_string()))?;
        for (name, probs) in rec.targets {
            let g = GroupId::new(name).map_err(|e| bad(e.to_string()))?;
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > LOAD_SUM_TOLERANCE {
                return Err(bad(format!("target for {g} sums to {sum}")));
            }
            let d = ProbDistribution::renormalize(&probs, 0.0).map_err(|e| bad(e.to_string()))?;
            if !groups.contains(&g) {
                groups.push(g.clone());
            }
            targets.entry(g).or_default().insert(q.id.clone(), d);
        }
        questions.push(q);
    }
    groups.sort();
    Ok(PreferenceDataset::new(questions, groups, targets)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(groups: usize, eta: f64) -> GeneratorSpec {
        GeneratorSpec {
            groups,
            questions: 12,
            heterogeneity: eta,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn no_heterogeneity_means_identical_groups() {
        let d = generate_dataset(&spec(4, 0.0)).unwrap();
        for q in d.questions() {
            let first = d.target(&d.groups()[0], &q.id).unwrap();
            for g in d.groups() {
                assert_eq!(d.target(g, &q.id).unwrap(), first);
            }
        }
    }

    #[test]
    fn full_heterogeneity_is_reproducible_and_distinct() {
        let a = generate_dataset(&spec(2, 1.0)).unwrap();
        let b = generate_dataset(&spec(2, 1.0)).unwrap();
        assert_eq!(a, b);
        let q = &a.questions()[0].id;
        assert_ne!(a.target(&a.groups()[0], q), a.target(&a.groups()[1], q));
    }

    #[test]
    fn single_group_dataset_is_valid() {
        let d = generate_dataset(&spec(1, 0.7)).unwrap();
        assert_eq!(d.groups().len(), 1);
        assert_eq!(d.questions().len(), 12);
    }

    #[test]
    fn file_round_trip() {
        let d = generate_dataset(&spec(3, 0.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.questions(), d.questions());
        for g in d.groups() {
            for q in d.questions() {
                let (x, y) = (back.target(g, &q.id).unwrap(), d.target(g, &q.id).unwrap());
                for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn loader_renormalizes_small_drift_and_rejects_large() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        std::fs::write(
            &path,
            "{\"question_id\":\"q1\",\"options\":[\"yes\",\"no\"],\"targets\":{\"a\":[0.6,0.4005]}}\n\n",
        )
        .unwrap();
        let d = load_dataset(&path).unwrap();
        let t = d.target(&GroupId::new("a").unwrap(), "q1").unwrap();
        assert!((t.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        std::fs::write(
            &path,
            "{\"question_id\":\"q1\",\"options\":[\"yes\",\"no\"],\"targets\":{\"a\":[0.6,0.45]}}\n",
        )
        .unwrap();
        assert!(matches!(load_dataset(&path), Err(HarnessError::Dataset { line: 1, .. })));
    }
}
