//! Randomized property suites for the evidential core, the aggregation
//! operator, and the IDX round trip.

use proptest::prelude::*;

use evical::data::{read_idx, write_idx_images, write_idx_labels};
use evical::evidential::{
    breakdown, scaling_factor, tconorm, to_opinion, uncertainty, Evidence,
};
use evical::losses::UncertaintyConfig;

fn evidence_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![3 => 0.0..50.0f64, 1 => Just(0.0)],
        k..=k,
    )
}

fn arb_evidence() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        evidence_vec(2),
        evidence_vec(3),
        evidence_vec(10),
        evidence_vec(100),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn opinion_mass_conserved(values in arb_evidence()) {
        let e = Evidence::new(values).unwrap();
        let op = to_opinion(&e);
        let total: f64 = op.beliefs.iter().sum::<f64>() + op.ignorance;
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }

    #[test]
    fn scaling_factor_bounded(values in arb_evidence()) {
        let e = Evidence::new(values).unwrap();
        let r = scaling_factor(&e).value();
        prop_assert!((0.5..=1.0).contains(&r), "r = {r}");
    }

    #[test]
    fn uncertainty_components_in_unit_interval(values in arb_evidence()) {
        let e = Evidence::new(values).unwrap();
        let bd = uncertainty(&e);
        prop_assert!((0.0..=1.0).contains(&bd.ignorance));
        prop_assert!((0.0..=1.0).contains(&bd.conflict));
        prop_assert!((0.0..=1.0).contains(&bd.aggregated));
        prop_assert!(bd.aggregated > 0.0, "u must stay positive, got {}", bd.aggregated);
        // Aggregation never falls below either input.
        prop_assert!(bd.aggregated >= bd.ignorance - 1e-12);
        prop_assert!(bd.aggregated >= bd.conflict - 1e-12);
    }

    #[test]
    fn tconorm_laws(a in 0.0..=1.0f64, b in 0.0..=1.0f64, c in 0.0..=1.0f64) {
        let ab = tconorm(a, b).unwrap();
        let ba = tconorm(b, a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-15, "commutativity");
        prop_assert!((tconorm(a, 0.0).unwrap() - a).abs() < 1e-15, "identity");
        prop_assert!((tconorm(a, 1.0).unwrap() - 1.0).abs() < 1e-12, "annihilator");
        // monotone: b <= c implies T(a,b) <= T(a,c)
        let (lo, hi) = if b <= c { (b, c) } else { (c, b) };
        prop_assert!(tconorm(a, lo).unwrap() <= tconorm(a, hi).unwrap() + 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn conflict_collapse_matches_ignorance(values in arb_evidence()) {
        // With the conflict channel disabled the aggregate is the ignorance.
        let e = Evidence::new(values).unwrap();
        let cfg = UncertaintyConfig { dynamic_scaling: true, use_conflict: false };
        let op = cfg.opinion(&e);
        let bd = breakdown(&op, false);
        prop_assert!((bd.aggregated - bd.ignorance).abs() < 1e-15);
    }

    #[test]
    fn idx_round_trip(
        rows in 1usize..6,
        cols in 1usize..6,
        n in 1usize..20,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..n * rows * cols).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs");
        let lab_path = dir.path().join("labs");
        write_idx_images(&img_path, &pixels, n, rows, cols).unwrap();
        write_idx_labels(&lab_path, &labels).unwrap();
        let ds = read_idx(&img_path, &lab_path).unwrap();
        prop_assert_eq!(ds.len(), n);
        prop_assert_eq!(ds.features.cols, rows * cols);
        for (i, &l) in labels.iter().enumerate() {
            prop_assert_eq!(ds.labels[i], l as usize);
            for (j, &p) in pixels[i * rows * cols..(i + 1) * rows * cols].iter().enumerate() {
                let v = ds.features.get(i, j);
                prop_assert!((v - p as f64 / 255.0).abs() < 1e-12);
            }
        }
    }
}
