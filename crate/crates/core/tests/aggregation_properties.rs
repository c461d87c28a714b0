mod common;

use appa::aggregation::*;
use appa::domain::{GroupId, RewardMatrix};
use common::relative_gap;
use proptest::prelude::*;

fn rewards() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..=1.0f64, 1..=8)
}

fn finite_alpha() -> impl Strategy<Value = f64> {
    prop_oneof![-50.0..50.0f64, Just(0.0)]
}

fn groups(n: usize) -> Vec<GroupId> {
    (0..n).map(|i| GroupId::new(format!("g{i}")).unwrap()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> RewardMatrix {
    RewardMatrix::new(0, groups(rows.len()), rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn fixed_alpha_is_monotone(r in rewards(), a in finite_alpha(), bumps in proptest::collection::vec(0.0..0.5f64, 8)) {
        let up: Vec<f64> = r.iter().zip(&bumps).map(|(x, b)| (x + b).min(1.0)).collect();
        let lo = fixed_alpha_agg(Alpha::Finite(a), &r).unwrap();
        let hi = fixed_alpha_agg(Alpha::Finite(a), &up).unwrap();
        prop_assert!(hi >= lo - 1e-12, "{lo} > {hi}");
    }

    #[test]
    fn fixed_alpha_lies_between_min_and_max(r in rewards(), a in finite_alpha()) {
        let v = fixed_alpha_agg(Alpha::Finite(a), &r).unwrap();
        let lo = min_agg(&r).unwrap();
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&v.clamp(-1e-12, 1.0 + 1e-12)));
    }

    #[test]
    fn fixed_alpha_shifts_with_its_inputs(r in rewards(), a in finite_alpha(), c in -3.0..3.0f64) {
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let base = fixed_alpha_agg(Alpha::Finite(a), &r).unwrap();
        let moved = fixed_alpha_agg(Alpha::Finite(a), &shifted).unwrap();
        prop_assert!((moved - (base + c)).abs() < 1e-9);
    }

    #[test]
    fn large_alpha_approaches_the_extremes(r in rewards()) {
        let lo = min_agg(&r).unwrap();
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((fixed_alpha_agg(Alpha::Finite(-1e4), &r).unwrap() - lo).abs() < 1e-3);
        prop_assert!((fixed_alpha_agg(Alpha::Finite(1e4), &r).unwrap() - hi).abs() < 1e-3);
        prop_assert_eq!(fixed_alpha_agg(Alpha::NegInf, &r).unwrap(), lo);
        prop_assert_eq!(fixed_alpha_agg(Alpha::PosInf, &r).unwrap(), hi);
    }

    #[test]
    fn transfers_to_the_poorer_group_help_when_alpha_is_negative(
        r in proptest::collection::vec(0.0..=1.0f64, 2..=8),
        a in -50.0..-0.01f64,
        frac in 0.01..0.49f64,
    ) {
        let (i, j) = (0..r.len()).fold((0, 0), |(lo, hi), k| {
            (if r[k] < r[lo] { k } else { lo }, if r[k] > r[hi] { k } else { hi })
        });
        prop_assume!(r[j] - r[i] > 1e-3);
        let d = frac * (r[j] - r[i]);
        let mut moved = r.clone();
        moved[i] += d;
        moved[j] -= d;
        let before = fixed_alpha_agg(Alpha::Finite(a), &r).unwrap();
        let after = fixed_alpha_agg(Alpha::Finite(a), &moved).unwrap();
        prop_assert!(after > before - 1e-12, "{before} -> {after}");
    }

    #[test]
    fn weights_reverse_the_history_order(h in proptest::collection::vec(0.0..=1.0f64, 1..=8), t in 0.01..2.0f64) {
        let w = reversed_softmax(&h, t);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for a in 0..h.len() {
            for b in 0..h.len() {
                if h[a] < h[b] {
                    prop_assert!(w[a] >= w[b]);
                }
                if h[a] == h[b] {
                    prop_assert_eq!(w[a], w[b]);
                }
            }
        }
    }

    #[test]
    fn adaptive_aggregate_stays_in_unit_interval(
        rows in (1..=6usize, 1..=10usize).prop_flat_map(|(n, m)| proptest::collection::vec(proptest::collection::vec(0.0..=1.0f64, m), n)),
        h in proptest::collection::vec(0.0..=1.0f64, 6),
    ) {
        let n = rows.len();
        let m = matrix(rows);
        let cfg = AppaConfig::default();
        let mut state = AggregationState::new(groups(n));
        let means: Vec<(GroupId, f64)> = groups(n).into_iter().zip(h).collect();
        state = update_history(&state, &means, &cfg).unwrap();
        state.refresh_weights(&cfg);
        let out = appa_rewards(&m, &state, &cfg).unwrap();
        for (j, v) in out.rewards.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(v));
            if out.branch == Branch::Average {
                prop_assert!((v - average_agg(&m.item_column(j)).unwrap()).abs() < 1e-15);
            }
        }
        prop_assert_eq!(out.branch == Branch::Average, out.fi >= cfg.tau);
    }

    #[test]
    fn fairness_index_is_in_unit_interval(
        rows in (1..=6usize, 1..=10usize).prop_flat_map(|(n, m)| proptest::collection::vec(proptest::collection::vec(0.0..=1.0f64, m), n)),
    ) {
        let fi = fairness_index(&matrix(rows), &AppaConfig::default());
        prop_assert!(fi > 0.0 && fi <= 1.0);
    }

    #[test]
    fn identical_groups_are_perfectly_fair(row in proptest::collection::vec(0.0..=1.0f64, 1..=10), n in 1..=6usize) {
        prop_assert_eq!(fairness_index(&matrix(vec![row; n]), &AppaConfig::default()), 1.0);
    }

    #[test]
    fn effective_weights_match_finite_differences(
        (alpha, r) in (1..=8usize).prop_flat_map(|n| (proptest::collection::vec(0.0..1.0f64, n), proptest::collection::vec(0.0..=1.0f64, n))),
    ) {
        let s: f64 = alpha.iter().sum::<f64>().max(1e-9);
        let alpha: Vec<f64> = alpha.iter().map(|a| a / s).collect();
        let w = effective_weights(&alpha, &r);
        let h = 1e-5;
        for g in 0..r.len() {
            let (mut up, mut dn) = (r.clone(), r.clone());
            up[g] += h;
            dn[g] -= h;
            let fd = (weighted_log_mean_exp(&alpha, &up).unwrap() - weighted_log_mean_exp(&alpha, &dn).unwrap()) / (2.0 * h);
            prop_assert!(relative_gap(fd, w[g]) < 1e-5 || (fd - w[g]).abs() < 1e-10, "{fd} vs {}", w[g]);
        }
    }
}

#[test]
fn low_mean_questions_are_left_out_of_the_index() {
    let cfg = AppaConfig::default();
    let with_low = matrix(vec![vec![0.5, 0.0], vec![1.0, 1e-7]]);
    assert!((fairness_index(&with_low, &cfg) - 0.9).abs() < 1e-12);
    let all_low = matrix(vec![vec![0.0], vec![1e-7]]);
    assert_eq!(fairness_index(&all_low, &cfg), 1.0);
}

#[test]
fn dispersion_is_capped() {
    let cfg = AppaConfig {
        cov_max: 0.5,
        ..Default::default()
    };
    let m = matrix(vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]]);
    assert!((fairness_index(&m, &cfg) - 1.0 / 1.25).abs() < 1e-12);
}

#[test]
fn history_update_then_weights() {
    let cfg = AppaConfig::default();
    let g = groups(2);
    let s = AggregationState::new(g.clone());
    let next = update_history(&s, &[(g[0].clone(), 1.0), (g[1].clone(), 0.5)], &cfg).unwrap();
    assert!((next.histories()[0] - 0.2).abs() < 1e-15);
    assert!((next.histories()[1] - 0.1).abs() < 1e-15);
    let w = compute_weights(&next, &cfg);
    assert!(w[1] > w[0]);
    assert!((w[1] / w[0] - 1f64.exp()).abs() < 1e-12);
}
