mod common;

use appa::domain::{ranking_from_distribution, ProbDistribution, Ranking};
use appa::metrics::{borda_reward, cosine_reward, js_reward, wasserstein_reward};
use common::*;
use proptest::prelude::*;

fn distribution(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(|k| proptest::collection::vec(prop_oneof![1 => Just(0.0), 5 => 0.0..1.0f64], k))
        .prop_filter("needs mass", |w| w.iter().sum::<f64>() > 1e-9)
        .prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
}

fn pair(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    distribution(k).prop_flat_map(|p| {
        let k = p.len();
        (Just(p), distribution(k..=k))
    })
}

fn permutation(k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..k).collect::<Vec<_>>()).prop_shuffle()
}

#[test]
fn wasserstein_matches_exhaustive_transport_on_grids() {
    for k in 2..=4 {
        for m in [4, 5] {
            let g = grid(k, m);
            for p in &g {
                for q in &g {
                    let pd = dist(&p.iter().map(|&c| c as f64 / m as f64).collect::<Vec<_>>());
                    let qd = dist(&q.iter().map(|&c| c as f64 / m as f64).collect::<Vec<_>>());
                    let got = wasserstein_reward(&pd, &qd).unwrap();
                    let want = wasserstein_oracle(p, q);
                    assert!((got - want).abs() < 1e-9, "{p:?} {q:?}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn single_option_distributions_do_not_exist() {
    assert!(ProbDistribution::new(vec![1.0]).is_err());
}

#[test]
fn length_mismatch_is_an_error() {
    let (a, b) = (dist(&[0.5, 0.5]), dist(&[0.2, 0.3, 0.5]));
    assert!(js_reward(&a, &b).is_err());
    assert!(cosine_reward(&a, &b).is_err());
    assert!(wasserstein_reward(&a, &b).is_err());
    assert!(borda_reward(&Ranking::identity(2), &Ranking::identity(3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn js_matches_entropy_form((p, q) in pair(2..=8)) {
        let got = js_reward(&dist(&p), &dist(&q)).unwrap();
        prop_assert!((got - js_oracle(&p, &q)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn js_is_symmetric_and_one_on_identity((p, q) in pair(2..=8)) {
        let (a, b) = (dist(&p), dist(&q));
        prop_assert!((js_reward(&a, &b).unwrap() - js_reward(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((js_reward(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_direct_form((p, q) in pair(2..=8)) {
        let got = cosine_reward(&dist(&p), &dist(&q)).unwrap();
        prop_assert!((got - cosine_oracle(&p, &q)).abs() < 1e-9);
        prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&got));
    }

    #[test]
    fn wasserstein_is_a_bounded_symmetric_score((p, q) in pair(2..=8)) {
        let (a, b) = (dist(&p), dist(&q));
        let ab = wasserstein_reward(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - wasserstein_reward(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((wasserstein_reward(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn borda_matches_position_credit((pred, target) in (1..=8usize).prop_flat_map(|k| (permutation(k), permutation(k)))) {
        let got = borda_reward(&Ranking::new(pred.clone()).unwrap(), &Ranking::new(target.clone()).unwrap()).unwrap();
        prop_assert!((got - borda_oracle(&pred, &target)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn target_ranking_sorts_by_probability(p in distribution(2..=8)) {
        let d = ProbDistribution::new(p.clone()).unwrap();
        let r = ranking_from_distribution(&d);
        for w in r.as_slice().windows(2) {
            prop_assert!(p[w[0]] > p[w[1]] || (p[w[0]] == p[w[1]] && w[0] < w[1]));
        }
    }
}
