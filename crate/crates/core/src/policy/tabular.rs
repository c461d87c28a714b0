use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::domain::{Prediction, ProbDistribution, Question, Ranking, TaskMode, DEFAULT_MU_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Sampling temperature applied to the logits.
    pub temperature: f64,
    /// Size of the DPA weight grid `{0, 1/(B-1), ..., 1}`.
    pub bins: usize,
    /// Add a table shared by all questions with the same option count, so
    /// what is learned on training questions carries over to held-out ones.
    pub shared_tables: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            bins: 11,
            shared_tables: true,
        }
    }
}

/// Numerically stable softmax of `logits / temperature` restricted to the
/// unmasked entries; masked entries get probability 0.
pub(crate) fn masked_softmax(logits: &[f64], temperature: f64, masked: &[bool]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(masked)
        .filter(|(_, &off)| !off)
        .map(|(z, _)| z / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(masked)
        .map(|(z, &off)| if off { 0.0 } else { (z / temperature - m).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Log-probability of `action` under the masked tempered softmax.
pub(crate) fn masked_log_prob(logits: &[f64], temperature: f64, masked: &[bool], action: usize) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let m = scaled
        .iter()
        .zip(masked)
        .filter(|(_, &off)| !off)
        .map(|(u, _)| *u)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scaled
        .iter()
        .zip(masked)
        .filter(|(_, &off)| !off)
        .map(|(u, _)| (u - m).exp())
        .sum::<f64>()
        .ln();
    scaled[action] - lse
}

/// A desk-scale policy: one categorical distribution per (question, step).
///
/// DPA episodes pick one weight-grid bin per option, then renormalize.
/// OPA episodes pick one not-yet-chosen option per step, which yields a
/// ranking. All parameters live in one flat vector; a question's logits are
/// its own table plus, when enabled, the table shared by its option count.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    mode: TaskMode,
    config: PolicyConfig,
    theta: Vec<f64>,
    shared_offset: BTreeMap<usize, usize>,
    local_offset: BTreeMap<String, usize>,
    arity: BTreeMap<String, usize>,
}

impl TabularPolicy {
    /// Zero logits (uniform at any temperature) for every question.
    pub fn new(mode: TaskMode, questions: &[Question], config: PolicyConfig) -> Result<Self, PolicyError> {
        if config.bins < 2 {
            return Err(PolicyError::InvalidConfig("need at least 2 bins".into()));
        }
        if !(config.temperature > 0.0) {
            return Err(PolicyError::InvalidConfig("temperature must be positive".into()));
        }
        let cols = |k: usize| match mode {
            TaskMode::Dpa => config.bins,
            TaskMode::Opa => k,
        };
        let mut len = 0;
        let mut shared_offset = BTreeMap::new();
        let mut arity = BTreeMap::new();
        for q in questions {
            arity.insert(q.id.clone(), q.num_options());
        }
        if config.shared_tables {
            let mut ks: Vec<usize> = arity.values().copied().collect();
            ks.sort_unstable();
            ks.dedup();
            for k in ks {
                shared_offset.insert(k, len);
                len += k * cols(k);
            }
        }
        let mut local_offset = BTreeMap::new();
        for (id, &k) in &arity {
            local_offset.insert(id.clone(), len);
            len += k * cols(k);
        }
        Ok(Self {
            mode,
            config,
            theta: vec![0.0; len],
            shared_offset,
            local_offset,
            arity,
        })
    }

    pub fn mode(&self) -> TaskMode {
        self.mode
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    pub fn covers(&self, question: &str) -> bool {
        self.arity.contains_key(question)
    }

    /// Number of sequential actions in an episode for `question`.
    pub fn steps(&self, question: &str) -> Result<usize, PolicyError> {
        self.arity
            .get(question)
            .copied()
            .ok_or_else(|| PolicyError::UnknownQuestion(question.to_string()))
    }

    /// Number of choices available at each step.
    pub fn num_actions(&self, k: usize) -> usize {
        match self.mode {
            TaskMode::Dpa => self.config.bins,
            TaskMode::Opa => k,
        }
    }

    /// Weight of DPA bin `b`.
    pub fn bin_weight(&self, b: usize) -> f64 {
        b as f64 / (self.config.bins - 1) as f64
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Flat-vector offsets of the rows feeding `(question, step)`: the
    /// question's own row and, if enabled, the shared row.
    pub(crate) fn row_offsets(&self, question: &str, step: usize) -> Result<(usize, Option<usize>, usize), PolicyError> {
        let k = self.steps(question)?;
        if step >= k {
            return Err(PolicyError::InvalidStep { step, steps: k });
        }
        let cols = self.num_actions(k);
        let local = self.local_offset[question] + step * cols;
        let shared = self.shared_offset.get(&k).map(|o| o + step * cols);
        Ok((local, shared, cols))
    }

    pub fn logits(&self, question: &str, step: usize) -> Result<Vec<f64>, PolicyError> {
        let (local, shared, cols) = self.row_offsets(question, step)?;
        let mut z = self.theta[local..local + cols].to_vec();
        if let Some(s) = shared {
            z.iter_mut()
                .zip(&self.theta[s..s + cols])
                .for_each(|(a, b)| *a += b);
        }
        Ok(z)
    }

    /// Options already used earlier in an OPA episode are masked.
    pub(crate) fn mask(&self, cols: usize, earlier: &[usize]) -> Vec<bool> {
        let mut masked = vec![false; cols];
        if self.mode == TaskMode::Opa {
            for &a in earlier {
                masked[a] = true;
            }
        }
        masked
    }

    /// Action probabilities at `step` given the earlier actions of the episode.
    pub fn step_probs(&self, question: &str, step: usize, earlier: &[usize]) -> Result<Vec<f64>, PolicyError> {
        let z = self.logits(question, step)?;
        let masked = self.mask(z.len(), earlier);
        Ok(masked_softmax(&z, self.config.temperature, &masked))
    }

    pub fn log_prob(&self, question: &str, step: usize, earlier: &[usize], action: usize) -> Result<f64, PolicyError> {
        let z = self.logits(question, step)?;
        if action >= z.len() {
            return Err(PolicyError::InvalidAction(action));
        }
        let masked = self.mask(z.len(), earlier);
        if masked[action] {
            return Err(PolicyError::InvalidAction(action));
        }
        Ok(masked_log_prob(&z, self.config.temperature, &masked, action))
    }

    /// Samples a full episode.
    pub fn sample_episode<R: Rng + ?Sized>(&self, question: &str, rng: &mut R) -> Result<Vec<usize>, PolicyError> {
        let k = self.steps(question)?;
        let mut actions = Vec::with_capacity(k);
        for step in 0..k {
            let p = self.step_probs(question, step, &actions)?;
            let dist = WeightedIndex::new(&p).map_err(|e| PolicyError::Sampling(e.to_string()))?;
            actions.push(dist.sample(rng));
        }
        Ok(actions)
    }

    /// Most likely action at every step (lowest index on ties).
    pub fn greedy_episode(&self, question: &str) -> Result<Vec<usize>, PolicyError> {
        let k = self.steps(question)?;
        let mut actions = Vec::with_capacity(k);
        for step in 0..k {
            let p = self.step_probs(question, step, &actions)?;
            let best = p
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
            actions.push(best);
        }
        Ok(actions)
    }

    /// Turns an episode's actions into the output it stands for. DPA draws
    /// that are all zero fall back to the uniform distribution.
    pub fn decode(&self, actions: &[usize]) -> Result<Prediction, PolicyError> {
        match self.mode {
            TaskMode::Dpa => {
                let weights: Vec<f64> = actions.iter().map(|&b| self.bin_weight(b)).collect();
                let d = match ProbDistribution::renormalize(&weights, DEFAULT_MU_MIN) {
                    Ok(d) => d,
                    Err(_) => ProbDistribution::uniform(weights.len())?,
                };
                Ok(Prediction::Distribution(d))
            }
            TaskMode::Opa => Ok(Prediction::Ranking(Ranking::new(actions.to_vec())?)),
        }
    }

    /// Parameters as a flat, named map (`shared/k{K}/s{step}/a{action}`,
    /// `q/{id}/s{step}/a{action}`).
    pub fn to_named(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (&k, &off) in &self.shared_offset {
            let cols = self.num_actions(k);
            for i in 0..k * cols {
                out.insert(format!("shared/k{k}/s{}/a{}", i / cols, i % cols), self.theta[off + i]);
            }
        }
        for (id, &off) in &self.local_offset {
            let k = self.arity[id];
            let cols = self.num_actions(k);
            for i in 0..k * cols {
                out.insert(format!("q/{id}/s{}/a{}", i / cols, i % cols), self.theta[off + i]);
            }
        }
        out
    }

    /// Loads values written by [`Self::to_named`]; every parameter must be present.
    pub fn load_named(&mut self, named: &BTreeMap<String, f64>) -> Result<(), PolicyError> {
        let names = self.to_named();
        if names.len() != named.len() {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} policy parameters, found {}",
                names.len(),
                named.len()
            )));
        }
        let mut flat = Vec::with_capacity(self.theta.len());
        // to_named and the flat layout are both ordered, but not identically;
        // rebuild through the offsets
        for (&k, _) in &self.shared_offset {
            let cols = self.num_actions(k);
            for i in 0..k * cols {
                flat.push(lookup(named, &format!("shared/k{k}/s{}/a{}", i / cols, i % cols))?);
            }
        }
        for (id, _) in &self.local_offset {
            let k = self.arity[id];
            let cols = self.num_actions(k);
            for i in 0..k * cols {
                flat.push(lookup(named, &format!("q/{id}/s{}/a{}", i / cols, i % cols))?);
            }
        }
        self.theta = flat;
        Ok(())
    }
}

fn lookup(named: &BTreeMap<String, f64>, key: &str) -> Result<f64, PolicyError> {
    let v = *named
        .get(key)
        .ok_or_else(|| PolicyError::Checkpoint(format!("missing parameter {key}")))?;
    if !v.is_finite() {
        return Err(PolicyError::Checkpoint(format!("parameter {key} is not finite")));
    }
    Ok(v)
}

/// A frozen copy of the policy's starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(TabularPolicy);

impl ReferencePolicy {
    pub fn snapshot(policy: &TabularPolicy) -> Self {
        Self(policy.clone())
    }

    pub fn log_prob(&self, question: &str, step: usize, earlier: &[usize], action: usize) -> Result<f64, PolicyError> {
        self.0.log_prob(question, step, earlier, action)
    }

    pub fn step_probs(&self, question: &str, step: usize, earlier: &[usize]) -> Result<Vec<f64>, PolicyError> {
        self.0.step_probs(question, step, earlier)
    }
}

/// Value estimates per (question, step).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: BTreeMap<String, Vec<f64>>,
}

impl ValueTable {
    pub fn zeros(questions: &[Question]) -> Self {
        Self {
            values: questions
                .iter()
                .map(|q| (q.id.clone(), vec![0.0; q.num_options()]))
                .collect(),
        }
    }

    pub fn get(&self, question: &str, step: usize) -> Result<f64, PolicyError> {
        self.values
            .get(question)
            .and_then(|v| v.get(step))
            .copied()
            .ok_or_else(|| PolicyError::UnknownQuestion(question.to_string()))
    }

    pub fn get_mut(&mut self, question: &str, step: usize) -> Result<&mut f64, PolicyError> {
        self.values
            .get_mut(question)
            .and_then(|v| v.get_mut(step))
            .ok_or_else(|| PolicyError::UnknownQuestion(question.to_string()))
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|(id, v)| (id.clone(), vec![0.0; v.len()]))
                .collect(),
        }
    }

    /// `self += scale * other`, for tables with the same layout.
    pub(crate) fn add_scaled(&mut self, other: &ValueTable, scale: f64) {
        for (id, v) in self.values.iter_mut() {
            if let Some(o) = other.values.get(id) {
                v.iter_mut().zip(o).for_each(|(a, b)| *a += scale * b);
            }
        }
    }

    pub fn to_named(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .flat_map(|(id, v)| {
                v.iter()
                    .enumerate()
                    .map(move |(s, x)| (format!("v/{id}/s{s}"), *x))
            })
            .collect()
    }

    pub fn load_named(&mut self, named: &BTreeMap<String, f64>) -> Result<(), PolicyError> {
        for (id, v) in self.values.iter_mut() {
            for (s, x) in v.iter_mut().enumerate() {
                *x = lookup(named, &format!("v/{id}/s{s}"))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(id: &str, k: usize) -> Question {
        Question::new(id, (0..k).map(|i| format!("o{i}")).collect()).unwrap()
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = TabularPolicy::new(TaskMode::Dpa, &[q("a", 3)], PolicyConfig::default()).unwrap();
        let probs = p.step_probs("a", 0, &[]).unwrap();
        assert_eq!(probs.len(), 11);
        assert!(probs.iter().all(|x| (x - 1.0 / 11.0).abs() < 1e-15));
    }

    #[test]
    fn opa_masks_chosen_options() {
        let p = TabularPolicy::new(TaskMode::Opa, &[q("a", 3)], PolicyConfig::default()).unwrap();
        let probs = p.step_probs("a", 1, &[2]).unwrap();
        assert_eq!(probs[2], 0.0);
        assert!((probs[0] - 0.5).abs() < 1e-15);
        assert!(p.log_prob("a", 1, &[2], 2).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let eps = p.sample_episode("a", &mut rng).unwrap();
            assert!(Ranking::new(eps).is_ok());
        }
    }

    #[test]
    fn shared_rows_add_to_local_rows() {
        let mut p = TabularPolicy::new(TaskMode::Dpa, &[q("a", 2), q("b", 2)], PolicyConfig {
            bins: 3,
            ..Default::default()
        })
        .unwrap();
        // shared k2 table first (2 steps x 3 bins), then a, then b
        assert_eq!(p.params().len(), 6 * 3);
        p.params_mut()[0] = 1.0;
        p.params_mut()[6] = 0.5;
        assert_eq!(p.logits("a", 0).unwrap(), vec![1.5, 0.0, 0.0]);
        assert_eq!(p.logits("b", 0).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn decode_falls_back_to_uniform() {
        let p = TabularPolicy::new(TaskMode::Dpa, &[q("a", 2)], PolicyConfig::default()).unwrap();
        assert_eq!(
            p.decode(&[0, 0]).unwrap(),
            Prediction::Distribution(ProbDistribution::uniform(2).unwrap())
        );
        assert_eq!(
            p.decode(&[10, 0]).unwrap(),
            Prediction::Distribution(ProbDistribution::new(vec![1.0, 0.0]).unwrap())
        );
    }

    #[test]
    fn named_params_round_trip() {
        let mut p = TabularPolicy::new(TaskMode::Opa, &[q("a", 3), q("b", 2)], PolicyConfig::default()).unwrap();
        for (i, x) in p.params_mut().iter_mut().enumerate() {
            *x = i as f64 * 0.25 - 1.0;
        }
        let named = p.to_named();
        let mut fresh = TabularPolicy::new(TaskMode::Opa, &[q("a", 3), q("b", 2)], PolicyConfig::default()).unwrap();
        fresh.load_named(&named).unwrap();
        assert_eq!(fresh, p);
    }
}
