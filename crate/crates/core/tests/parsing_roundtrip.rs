mod common;

use appa::domain::{option_letters, Prediction, Ranking};
use appa::parsing::{blend_final_reward, parse_dpa, parse_opa, serialize_dpa, serialize_opa, FormatReport};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report_is_consistent(r: &FormatReport) -> Result<(), TestCaseError> {
    prop_assert!((0.0..=1.0).contains(&r.score));
    prop_assert_eq!(r.issues.is_empty(), r.score == 1.0);
    if r.is_unparseable() {
        prop_assert_eq!(r.score, 0.0);
        prop_assert!(r.parsed.is_none());
    }
    if r.parsed.is_some() {
        prop_assert!(r.score > 0.0);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn dpa_round_trip(seed in any::<u64>(), k in 2..=10usize) {
        let d = random_dist(&mut ChaCha8Rng::seed_from_u64(seed), k);
        let text = serialize_dpa(&d);
        let r = parse_dpa(&text, k);
        prop_assert_eq!(r.score, 1.0, "{}", text);
        let Some(Prediction::Distribution(back)) = r.parsed else { panic!("no distribution from {text}") };
        let largest = (0..k).fold(0, |b, i| if d.as_slice()[i] > d.as_slice()[b] { i } else { b });
        for i in 0..k {
            let bound = if i == largest { 0.005 * (k - 1) as f64 + 1e-9 } else { 0.005 + 1e-9 };
            prop_assert!((back.as_slice()[i] - d.as_slice()[i]).abs() <= bound);
        }
        prop_assert_eq!(serialize_dpa(&back), text);
    }

    #[test]
    fn opa_round_trip(seed in any::<u64>(), k in 1..=12usize) {
        let r = random_ranking(&mut ChaCha8Rng::seed_from_u64(seed), k);
        let letters = option_letters(k);
        let rep = parse_opa(&serialize_opa(&r, &letters), &letters);
        prop_assert_eq!(rep.score, 1.0);
        prop_assert_eq!(rep.parsed, Some(Prediction::Ranking(r)));
    }

    #[test]
    fn dpa_parser_survives_arbitrary_text(s in ".{0,40}", k in 2..=6usize) {
        report_is_consistent(&parse_dpa(&s, k))?;
    }

    #[test]
    fn opa_parser_survives_arbitrary_text(s in "[A-Fa-f ,>0-9]{0,20}", k in 1..=6usize) {
        report_is_consistent(&parse_opa(&s, &option_letters(k)))?;
    }

    #[test]
    fn blended_reward_is_a_convex_combination(m in 0.0..=1.0f64, f in 0.0..=1.0f64, w in 0.0..=1.0f64) {
        let v = blend_final_reward(m, f, w).unwrap();
        prop_assert!(v >= m.min(f) - 1e-15 && v <= m.max(f) + 1e-15);
    }
}

#[test]
fn random_bytes_never_crash_the_parsers() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let letters = option_letters(4);
    for _ in 0..20_000 {
        let len = rng.random_range(0..48);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let s = String::from_utf8_lossy(&bytes);
        let a = parse_dpa(&s, 4);
        let b = parse_opa(&s, &letters);
        assert!((0.0..=1.0).contains(&a.score) && (0.0..=1.0).contains(&b.score));
    }
}

#[test]
fn identity_ranking_text() {
    let letters = option_letters(3);
    assert_eq!(serialize_opa(&Ranking::identity(3), &letters), "A,B,C");
}
