//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use appa::domain::{PreferenceDataset, ProbDistribution, Ranking};
use appa::federation::tcp::{serve_client, TcpTransport};
use appa::domain::GroupId;
use appa::federation::{FederationError, GroupClient, RewardReport, RolloutBroadcast, Transport};
use appa::metrics::MetricKind;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn dist(p: &[f64]) -> ProbDistribution {
    ProbDistribution::new(p.to_vec()).unwrap()
}

/// Random distribution with some exact zeros mixed in.
pub fn random_dist<R: Rng>(rng: &mut R, k: usize) -> ProbDistribution {
    loop {
        let w: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return ProbDistribution::new(w.iter().map(|x| x / s).collect()).unwrap();
        }
    }
}

pub fn random_ranking<R: Rng>(rng: &mut R, k: usize) -> Ranking {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    Ranking::new(order).unwrap()
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>() / std::f64::consts::LN_2
}

/// `1 - [H(M) - (H(P) + H(Q)) / 2]`, entropies in bits.
pub fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    1.0 - (entropy_bits(&m) - 0.5 * (entropy_bits(p) + entropy_bits(q)))
}

pub fn cosine_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut pp = 0.0;
    let mut qq = 0.0;
    for i in 0..p.len() {
        dot += p[i] * q[i];
        pp += p[i] * p[i];
        qq += q[i] * q[i];
    }
    (1.0 + dot / (pp * qq).sqrt()) / 2.0
}

/// Credit `K - position` for every option sitting at the same position in
/// both rankings, over the maximum `K (K + 1) / 2`.
pub fn borda_oracle(pred: &[usize], target: &[usize]) -> f64 {
    let k = pred.len();
    let pos = |r: &[usize], opt: usize| r.iter().position(|&o| o == opt).unwrap();
    let mut hits = 0usize;
    for opt in 0..k {
        let (a, b) = (pos(pred, opt), pos(target, opt));
        if a == b {
            hits += k - a;
        }
    }
    hits as f64 / (k * (k + 1) / 2) as f64
}

/// All distributions over `k` options whose entries are multiples of `1/m`,
/// as counts summing to `m`.
pub fn grid(k: usize, m: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![m]];
    }
    let mut out = Vec::new();
    for first in 0..=m {
        for mut rest in grid(k - 1, m - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn atoms(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect()
}

fn best_matching(src: &[usize], dst: &mut Vec<usize>, from: usize, cost: usize, best: &mut usize) {
    if cost >= *best {
        return;
    }
    if from == src.len() {
        *best = cost;
        return;
    }
    for i in from..dst.len() {
        dst.swap(from, i);
        let step = src[from].abs_diff(dst[from]);
        best_matching(src, dst, from + 1, cost + step, best);
        dst.swap(from, i);
    }
}

/// Earth mover's distance between two grid distributions on the option
/// line, found by trying every one-to-one matching of unit-mass atoms.
pub fn exhaustive_w1(p: &[usize], q: &[usize]) -> f64 {
    let m: usize = p.iter().sum();
    let src = atoms(p);
    let mut dst = atoms(q);
    let mut best = usize::MAX;
    best_matching(&src, &mut dst, 0, 0, &mut best);
    best as f64 / m as f64
}

pub fn wasserstein_oracle(p: &[usize], q: &[usize]) -> f64 {
    1.0 - exhaustive_w1(p, q) / (p.len() - 1) as f64
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// A TCP server on an ephemeral port with one client thread per group.
pub fn tcp_federation(
    dataset: &PreferenceDataset,
    metric: MetricKind,
    omega: f64,
    deadline: Duration,
) -> (TcpTransport, Vec<JoinHandle<()>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handles = GroupClient::all_from_dataset(dataset, metric, omega)
        .unwrap()
        .into_iter()
        .map(|c| std::thread::spawn(move || serve_client(addr, &c, deadline).unwrap()))
        .collect();
    let transport = TcpTransport::accept(&listener, dataset.groups(), deadline).unwrap();
    (transport, handles)
}

/// Every group reports the same reward for every item.
pub struct ConstantTransport {
    pub groups: Vec<GroupId>,
    pub reward: f64,
}

impl Transport for ConstantTransport {
    fn groups(&self) -> Vec<GroupId> {
        self.groups.clone()
    }

    fn collect(&mut self, b: &RolloutBroadcast) -> Result<Vec<RewardReport>, FederationError> {
        Ok(self
            .groups
            .iter()
            .map(|g| RewardReport {
                group: g.clone(),
                iteration: b.iteration,
                rewards: vec![self.reward; b.items.len()],
            })
            .collect())
    }
}
