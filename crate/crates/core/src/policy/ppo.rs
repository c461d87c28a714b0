use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tabular::{masked_log_prob, masked_softmax};
use super::train::Trajectory;
use super::{PolicyError, TabularPolicy, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub kl_coef: f64,
    pub clip_range: f64,
    pub clip_range_value: f64,
    pub vf_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    /// Whitened rewards are clamped to `[-reward_clamp, reward_clamp]`.
    pub reward_clamp: f64,
    /// Whiten the KL-shaped per-step rewards instead of the terminal rewards.
    pub whiten_after_shaping: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            kl_coef: 0.05,
            clip_range: 0.2,
            clip_range_value: 0.2,
            vf_coef: 0.2,
            entropy_coef: 0.0,
            gamma: 1.0,
            gae_lambda: 0.95,
            ppo_epochs: 2,
            minibatches: 8,
            learning_rate: 1e-5,
            reward_clamp: 5.0,
            whiten_after_shaping: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.into()));
        if !(self.clip_range > 0.0) {
            return bad("clip_range must be positive");
        }
        if !(self.clip_range_value > 0.0) {
            return bad("clip_range_value must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if self.ppo_epochs == 0 || self.minibatches == 0 {
            return bad("ppo_epochs and minibatches must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a non-negative number");
        }
        if !(self.reward_clamp > 0.0) {
            return bad("reward_clamp must be positive");
        }
        if !(self.kl_coef >= 0.0) || !(self.vf_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

/// Per-step rewards: `-beta * (logp - logp_ref)` at every step, plus the
/// terminal reward on the last one.
pub fn shape_rewards(traj: &Trajectory, beta: f64) -> Vec<f64> {
    let mut r: Vec<f64> = traj
        .steps
        .iter()
        .map(|s| -beta * (s.logprob - s.ref_logprob))
        .collect();
    if let Some(last) = r.last_mut() {
        *last += traj.terminal_reward;
    }
    r
}

/// Standardizes a batch with its population standard deviation, then
/// clamps. A batch with std below 1e-8 maps to zeros.
pub fn whiten_and_clamp(rewards: &[f64], clamp: f64) -> Result<Vec<f64>, PolicyError> {
    if rewards.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards
        .iter()
        .map(|r| ((r - mean) / std).clamp(-clamp, clamp))
        .collect())
}

/// Generalized advantage estimation with a zero bootstrap after the last
/// step. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    if rewards.len() != values.len() {
        return Err(PolicyError::LengthMismatch(rewards.len(), values.len()));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// One decision point of a trajectory, ready for the PPO loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub question_id: String,
    pub step: usize,
    /// Actions taken earlier in the same episode.
    pub earlier: Vec<usize>,
    pub action: usize,
    pub old_logprob: f64,
    pub old_value: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Whitening, KL shaping and GAE over a batch of trajectories whose
/// `terminal_reward` holds the raw aggregated reward. Samples are grouped
/// per trajectory.
pub fn build_samples(trajs: &[Trajectory], cfg: &PpoConfig) -> Result<Vec<Vec<Sample>>, PolicyError> {
    if trajs.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let shaped: Vec<Vec<f64>> = if cfg.whiten_after_shaping {
        let raw: Vec<Vec<f64>> = trajs.iter().map(|t| shape_rewards(t, cfg.kl_coef)).collect();
        let flat: Vec<f64> = raw.iter().flatten().copied().collect();
        let mut white = whiten_and_clamp(&flat, cfg.reward_clamp)?.into_iter();
        raw.iter()
            .map(|r| r.iter().map(|_| white.next().expect("same length")).collect())
            .collect()
    } else {
        let terminal: Vec<f64> = trajs.iter().map(|t| t.terminal_reward).collect();
        let white = whiten_and_clamp(&terminal, cfg.reward_clamp)?;
        trajs
            .iter()
            .zip(white)
            .map(|(t, w)| {
                let mut t = t.clone();
                t.terminal_reward = w;
                shape_rewards(&t, cfg.kl_coef)
            })
            .collect()
    };
    trajs
        .iter()
        .zip(shaped)
        .map(|(t, r)| {
            let values: Vec<f64> = t.steps.iter().map(|s| s.value).collect();
            let (adv, ret) = gae(&r, &values, cfg.gamma, cfg.gae_lambda)?;
            Ok(t.steps
                .iter()
                .enumerate()
                .map(|(k, s)| Sample {
                    question_id: t.question_id.clone(),
                    step: k,
                    earlier: t.steps[..k].iter().map(|p| p.action).collect(),
                    action: s.action,
                    old_logprob: s.logprob,
                    old_value: s.value,
                    advantage: adv[k],
                    ret: ret[k],
                })
                .collect())
        })
        .collect()
}

/// Loss components over one minibatch. `total = policy + c1*value - c2*entropy`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn check_finite(parts: &LossParts) -> Result<(), PolicyError> {
    if parts.total.is_finite() && parts.policy.is_finite() && parts.value.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::NonFinite {
            what: format!("loss {parts:?}"),
            iteration: 0,
        })
    }
}

/// The composite PPO loss over `samples` at the current parameters.
pub fn ppo_loss(
    policy: &TabularPolicy,
    values: &ValueTable,
    samples: &[Sample],
    cfg: &PpoConfig,
) -> Result<LossParts, PolicyError> {
    Ok(evaluate(policy, values, samples, cfg, false)?.0)
}

/// Loss plus its analytic gradients with respect to the policy parameters
/// (flat, same layout as [`TabularPolicy::params`]) and the value table.
pub fn ppo_gradients(
    policy: &TabularPolicy,
    values: &ValueTable,
    samples: &[Sample],
    cfg: &PpoConfig,
) -> Result<(LossParts, Vec<f64>, ValueTable), PolicyError> {
    let (parts, grads) = evaluate(policy, values, samples, cfg, true)?;
    let (gp, gv) = grads.expect("requested");
    Ok((parts, gp, gv))
}

type Grads = Option<(Vec<f64>, ValueTable)>;

fn evaluate(
    policy: &TabularPolicy,
    values: &ValueTable,
    samples: &[Sample],
    cfg: &PpoConfig,
    want_grad: bool,
) -> Result<(LossParts, Grads), PolicyError> {
    if samples.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let n = samples.len() as f64;
    let temp = policy.temperature();
    let eps = cfg.clip_range;
    let mut gp = if want_grad { vec![0.0; policy.params().len()] } else { Vec::new() };
    let mut gv = values.zeros_like();
    let mut parts = LossParts::default();
    let mut clipped = 0usize;

    for s in samples {
        let z = policy.logits(&s.question_id, s.step)?;
        let masked = policy.mask(z.len(), &s.earlier);
        if s.action >= z.len() || masked[s.action] {
            return Err(PolicyError::InvalidAction(s.action));
        }
        let p = masked_softmax(&z, temp, &masked);
        let lp = masked_log_prob(&z, temp, &masked, s.action);
        let ratio = (lp - s.old_logprob).exp();
        let unclipped = ratio * s.advantage;
        let clipped_term = ratio.clamp(1.0 - eps, 1.0 + eps) * s.advantage;
        let surrogate = unclipped.min(clipped_term);
        // gradient flows only through the unclipped branch when it is the min
        let surrogate_grad = if unclipped <= clipped_term { ratio * s.advantage } else { 0.0 };
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        parts.policy -= surrogate / n;
        parts.approx_kl += (s.old_logprob - lp) / n;

        let v = values.get(&s.question_id, s.step)?;
        let v_clipped = s.old_value + (v - s.old_value).clamp(-cfg.clip_range_value, cfg.clip_range_value);
        let e1 = (v - s.ret).powi(2);
        let e2 = (v_clipped - s.ret).powi(2);
        parts.value += 0.5 * e1.max(e2) / n;
        let v_grad = if e1 >= e2 {
            v - s.ret
        } else if (v - s.old_value).abs() < cfg.clip_range_value {
            v_clipped - s.ret
        } else {
            0.0
        };

        let h = entropy_of(&p);
        parts.entropy += h / n;

        if want_grad {
            // d total / d z_b for this sample
            let mut gz = vec![0.0; z.len()];
            for b in 0..z.len() {
                if masked[b] {
                    continue;
                }
                let dlogp = ((b == s.action) as u8 as f64 - p[b]) / temp;
                let dh = if p[b] > 0.0 { -(p[b] / temp) * (p[b].ln() + h) } else { 0.0 };
                gz[b] = (-surrogate_grad * dlogp - cfg.entropy_coef * dh) / n;
            }
            let (local, shared, cols) = policy.row_offsets(&s.question_id, s.step)?;
            for b in 0..cols {
                gp[local + b] += gz[b];
                if let Some(o) = shared {
                    gp[o + b] += gz[b];
                }
            }
            *gv.get_mut(&s.question_id, s.step)? += cfg.vf_coef * v_grad / n;
        }
    }
    parts.total = parts.policy + cfg.vf_coef * parts.value - cfg.entropy_coef * parts.entropy;
    parts.clip_fraction = clipped as f64 / n;
    check_finite(&parts)?;
    Ok((parts, want_grad.then_some((gp, gv))))
}

/// Mean loss components over all minibatch steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// `ppo_epochs` passes over the batch, each split into `minibatches`
/// shuffled groups of whole trajectories, with one plain gradient step per
/// minibatch.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut TabularPolicy,
    values: &mut ValueTable,
    batch: &[Vec<Sample>],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossReport, PolicyError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let chunks = cfg.minibatches.min(batch.len());
    let mut report = LossReport::default();
    let mut steps = 0usize;
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for c in 0..chunks {
            let lo = c * batch.len() / chunks;
            let hi = (c + 1) * batch.len() / chunks;
            let mb: Vec<Sample> = order[lo..hi]
                .iter()
                .flat_map(|&i| batch[i].iter().cloned())
                .collect();
            if mb.is_empty() {
                continue;
            }
            let (parts, gp, gv) = ppo_gradients(policy, values, &mb, cfg)?;
            for (t, g) in policy.params_mut().iter_mut().zip(&gp) {
                *t -= cfg.learning_rate * g;
            }
            values.add_scaled(&gv, -cfg.learning_rate);
            report.policy_loss += parts.policy;
            report.value_loss += parts.value;
            report.entropy += parts.entropy;
            report.total_loss += parts.total;
            report.approx_kl += parts.approx_kl;
            report.clip_fraction += parts.clip_fraction;
            steps += 1;
        }
    }
    let s = steps.max(1) as f64;
    report.policy_loss /= s;
    report.value_loss /= s;
    report.entropy /= s;
    report.total_loss /= s;
    report.approx_kl /= s;
    report.clip_fraction /= s;
    if policy.params().iter().any(|x| !x.is_finite()) {
        return Err(PolicyError::NonFinite {
            what: "policy parameters".into(),
            iteration: 0,
        });
    }
    Ok(report)
}
