use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{build_samples, ppo_update, LossReport, PpoConfig};
use super::{PolicyError, ReferencePolicy, TabularPolicy, ValueTable};
use crate::aggregation::{AggregationState, AggregationStrategy, Branch};
use crate::domain::{option_letters, Prediction, Question, TaskMode};
use crate::federation::{run_round, BroadcastItem, RolloutBroadcast, RoundOutcome, Transport};
use crate::parsing::{serialize_dpa, serialize_opa};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: usize,
    /// Log-probability under the policy that sampled the action.
    pub logprob: f64,
    pub ref_logprob: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub steps: Vec<Step>,
    /// Reward credited at the last step; zero until the round is scored.
    pub terminal_reward: f64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples one episode per entry of `questions` (repeat an entry to sample
/// it more than once) and serializes the outputs into a broadcast.
pub fn rollout(
    policy: &TabularPolicy,
    reference: &ReferencePolicy,
    values: &ValueTable,
    questions: &[Question],
    iteration: u64,
    seed: u64,
) -> Result<(Vec<Trajectory>, RolloutBroadcast), PolicyError> {
    let mut rng = rng_for(seed, 2 * iteration);
    let mut trajs = Vec::with_capacity(questions.len());
    let mut items = Vec::with_capacity(questions.len());
    for q in questions {
        let actions = policy.sample_episode(&q.id, &mut rng)?;
        let mut steps = Vec::with_capacity(actions.len());
        for (k, &a) in actions.iter().enumerate() {
            steps.push(Step {
                action: a,
                logprob: policy.log_prob(&q.id, k, &actions[..k], a)?,
                ref_logprob: reference.log_prob(&q.id, k, &actions[..k], a)?,
                value: values.get(&q.id, k)?,
            });
        }
        let response = match policy.decode(&actions)? {
            Prediction::Distribution(d) => serialize_dpa(&d),
            Prediction::Ranking(r) => serialize_opa(&r, &option_letters(q.num_options())),
        };
        items.push(BroadcastItem {
            question_id: q.id.clone(),
            response,
        });
        trajs.push(Trajectory {
            question_id: q.id.clone(),
            steps,
            terminal_reward: 0.0,
        });
    }
    Ok((
        trajs,
        RolloutBroadcast {
            iteration,
            task_mode: policy.mode(),
            items,
        },
    ))
}

/// Mean per-episode log-ratio `sum_k (logp - logp_ref)` over a rollout.
pub fn mean_kl(trajs: &[Trajectory]) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs
        .iter()
        .map(|t| t.steps.iter().map(|s| s.logprob - s.ref_logprob).sum::<f64>())
        .sum::<f64>()
        / trajs.len() as f64
}

fn kl_step(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

impl TabularPolicy {
    /// Exact KL divergence between the episode distributions of `self` and
    /// `reference` on one question. DPA steps are independent, so their
    /// KLs add up; OPA episodes are enumerated.
    pub fn exact_kl(&self, reference: &ReferencePolicy, question: &str) -> Result<f64, PolicyError> {
        let k = self.steps(question)?;
        match self.mode() {
            TaskMode::Dpa => (0..k).try_fold(0.0, |acc, step| {
                Ok(acc + kl_step(&self.step_probs(question, step, &[])?, &reference.step_probs(question, step, &[])?))
            }),
            TaskMode::Opa => {
                fn walk(
                    p: &TabularPolicy,
                    r: &ReferencePolicy,
                    q: &str,
                    prefix: &mut Vec<usize>,
                    k: usize,
                ) -> Result<f64, PolicyError> {
                    if prefix.len() == k {
                        return Ok(0.0);
                    }
                    let step = prefix.len();
                    let pp = p.step_probs(q, step, prefix)?;
                    let rp = r.step_probs(q, step, prefix)?;
                    let mut total = kl_step(&pp, &rp);
                    for a in 0..k {
                        if pp[a] > 0.0 {
                            prefix.push(a);
                            total += pp[a] * walk(p, r, q, prefix, k)?;
                            prefix.pop();
                        }
                    }
                    Ok(total)
                }
                walk(self, reference, question, &mut Vec::new(), k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub strategy: AggregationStrategy,
    pub ppo: PpoConfig,
    pub iterations: usize,
    pub seed: u64,
    /// Episodes sampled per training question each iteration.
    pub rollouts_per_question: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: AggregationStrategy::appa(),
            ppo: PpoConfig::default(),
            iterations: 100,
            seed: 0,
            rollouts_per_question: 1,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub fi: f64,
    pub branch: Branch,
    /// Aggregation weights used this iteration.
    pub weights: BTreeMap<String, f64>,
    /// Histories after folding in this iteration's rewards.
    pub histories: BTreeMap<String, f64>,
    /// Raw (blended, unaggregated) mean reward per group.
    pub group_mean_rewards: BTreeMap<String, f64>,
    pub mean_aggregated: f64,
    pub mean_kl: f64,
    pub losses: LossReport,
}

impl IterationLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub iterations: Vec<IterationLog>,
    pub final_state: AggregationState,
}

impl TrainingLog {
    /// The whole log as JSON lines.
    pub fn to_jsonl(&self) -> String {
        self.iterations
            .iter()
            .map(|l| l.to_json_line() + "\n")
            .collect()
    }
}

/// The federated PPO loop. Each iteration samples a rollout, scores it
/// through `transport`, aggregates, updates the policy and then commits
/// the new aggregation history. `observe` sees every iteration as it
/// finishes.
pub fn train(
    policy: &mut TabularPolicy,
    values: &mut ValueTable,
    questions: &[Question],
    transport: &mut dyn Transport,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&IterationLog, &RoundOutcome) -> Result<(), PolicyError>,
) -> Result<TrainingLog, PolicyError> {
    cfg.ppo.validate()?;
    if cfg.rollouts_per_question == 0 {
        return Err(PolicyError::InvalidConfig("rollouts_per_question must be at least 1".into()));
    }
    let reference = ReferencePolicy::snapshot(policy);
    let mut state = AggregationState::new(transport.groups());
    let batch_questions: Vec<Question> = questions
        .iter()
        .flat_map(|q| std::iter::repeat_n(q.clone(), cfg.rollouts_per_question))
        .collect();
    let mut logs = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations as u64 {
        let (mut trajs, broadcast) = rollout(policy, &reference, values, &batch_questions, t, cfg.seed)?;
        let outcome = run_round(transport, &broadcast, &cfg.strategy, &state)?;
        for (tr, r) in trajs.iter_mut().zip(&outcome.aggregated) {
            tr.terminal_reward = *r;
        }
        let batch = build_samples(&trajs, &cfg.ppo)?;
        let mut rng = rng_for(cfg.seed, 2 * t + 1);
        let losses = ppo_update(policy, values, &batch, &cfg.ppo, &mut rng).map_err(|e| match e {
            PolicyError::NonFinite { what, .. } => PolicyError::NonFinite { what, iteration: t },
            e => e,
        })?;
        let names = |v: &[f64]| -> BTreeMap<String, f64> {
            outcome
                .matrix
                .groups()
                .iter()
                .map(|g| g.to_string())
                .zip(v.iter().copied())
                .collect()
        };
        let log = IterationLog {
            iteration: t,
            fi: outcome.fi,
            branch: outcome.branch,
            weights: names(&outcome.weights),
            histories: names(outcome.next_state.histories()),
            group_mean_rewards: names(&outcome.matrix.group_means()),
            mean_aggregated: outcome.aggregated.iter().sum::<f64>() / outcome.aggregated.len() as f64,
            mean_kl: mean_kl(&trajs),
            losses,
        };
        observe(&log, &outcome)?;
        state = outcome.next_state;
        logs.push(log);
    }
    Ok(TrainingLog {
        iterations: logs,
        final_state: state,
    })
}

/// Writes every policy and value parameter as one flat JSON object.
pub fn save_checkpoint(path: &Path, policy: &TabularPolicy, values: &ValueTable) -> Result<(), PolicyError> {
    let mut all = policy.to_named();
    all.extend(values.to_named());
    std::fs::write(path, serde_json::to_string_pretty(&all)?)?;
    Ok(())
}

/// Loads a checkpoint into tables built for the same question set.
pub fn load_checkpoint(path: &Path, policy: &mut TabularPolicy, values: &mut ValueTable) -> Result<(), PolicyError> {
    let all: BTreeMap<String, f64> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let (v, p): (BTreeMap<_, _>, BTreeMap<_, _>) = all.into_iter().partition(|(k, _)| k.starts_with("v/"));
    policy.load_named(&p)?;
    values.load_named(&v)?;
    Ok(())
}
