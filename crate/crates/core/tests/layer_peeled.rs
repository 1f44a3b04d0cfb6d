use ndarray::Array2;
use rand::{rngs::StdRng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use tempering::layer_peeled::{
    geometry_report, optimize_lpm, simplex_etf, solve_min_norm_separation, sqrt_temperatures, FeatureMode,
    LayerPeeledState, LpmConfig, LpmRun, MinNormMethod,
};
use tempering::losses::{LpmVariant, PeeledFeatures};

fn step_counts(k: usize, ratio: usize) -> Vec<usize> {
    (0..k).map(|c| if c < k / 2 { ratio } else { 1 }).collect()
}

fn run(counts: Vec<usize>, variant: LpmVariant, seed: u64) -> LpmRun {
    let temps = match variant {
        LpmVariant::Vanilla => Vec::new(),
        _ => sqrt_temperatures(&counts),
    };
    let mut cfg = LpmConfig::new(counts, variant, temps);
    cfg.seed = seed;
    optimize_lpm(&cfg).unwrap()
}

#[test]
fn balanced_binary_classifiers_are_antipodal() {
    let r = run(vec![5, 5], LpmVariant::Vanilla, 0);
    assert!((r.report.clf_cos[[0, 1]] + 1.0).abs() <= 0.01, "{}", r.report.clf_cos[[0, 1]]);
}

#[test]
fn feature_tempering_restores_the_etf() {
    for ratio in [10, 100] {
        let r = run(step_counts(4, ratio), LpmVariant::ItH, 1);
        let g = &r.report;
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert!((g.mean_cos[[a, b]] + 1.0 / 3.0).abs() <= 0.02, "R={ratio} cos[{a},{b}]={}", g.mean_cos[[a, b]]);
                }
            }
        }
        assert!(g.etf_dev <= 0.02);
    }
}

#[test]
fn classifier_tempering_sends_minority_means_antipodal() {
    let r = run(step_counts(4, 100), LpmVariant::ItW, 2);
    let c = r.report.mean_cos[[2, 3]];
    assert!((c + 1.0).abs() <= 0.05, "minority cosine {c}");
}

#[test]
fn classifier_tempering_trend_in_ratio() {
    let mut prev = f64::INFINITY;
    for ratio in [1, 10, 100] {
        let r = run(step_counts(4, ratio), LpmVariant::ItW, 3);
        let c = r.report.mean_cos[[2, 3]];
        assert!(c < prev, "minority cosine {c} at R={ratio} not below {prev}");
        prev = c;
        let maj = r.report.majority_pairs.max;
        assert!(maj < 0.0, "majority means not separated at R={ratio}: {maj}");
    }
}

#[test]
fn balanced_vanilla_reaches_the_etf() {
    for k in [3, 4, 10] {
        let r = run(vec![4; k], LpmVariant::Vanilla, 4);
        assert!(r.report.etf_dev <= 0.02, "K={k} etf_dev={}", r.report.etf_dev);
    }
}

#[test]
fn within_class_variation_collapses_after_separation() {
    for variant in [LpmVariant::Vanilla, LpmVariant::ItH, LpmVariant::ItW] {
        let r = run(step_counts(4, 10), variant, 5);
        let t0 = r.separated_step.expect("separates");
        let after: Vec<f64> = r.trace.iter().filter(|(s, _)| *s >= t0).map(|(_, g)| g.nc1).collect();
        assert!(after.windows(2).all(|w| w[1] <= w[0]), "{variant:?}: {after:?}");
        assert!(*after.last().unwrap() <= 1e-3, "{variant:?}: final nc1 {}", after.last().unwrap());
    }
}

#[test]
fn vanilla_minority_collapse_decreases_with_ratio() {
    let mut prev = f64::INFINITY;
    for ratio in [1, 10, 100, 1000] {
        let r = run(step_counts(4, ratio), LpmVariant::Vanilla, 6);
        let c = r.report.minority_collapse;
        assert!(c < prev, "collapse {c} at R={ratio} not below {prev}");
        prev = c;
    }
}

#[test]
fn min_norm_binary_is_antipodal() {
    for method in [MinNormMethod::Penalized, MinNormMethod::Alternating] {
        let s = solve_min_norm_separation(&[3, 3], 2, LpmVariant::Vanilla, &[], method, 1e-8, 0).unwrap();
        assert!(s.max_violation <= 1e-6);
        let g = geometry_report(&s.state);
        assert!((g.clf_cos[[0, 1]] + 1.0).abs() <= 1e-4, "{method:?}");
        assert!((g.mean_cos[[0, 1]] + 1.0).abs() <= 1e-4, "{method:?}");
    }
}

#[test]
fn min_norm_balanced_is_an_etf_and_methods_agree() {
    let a = solve_min_norm_separation(&[2; 4], 4, LpmVariant::Vanilla, &[], MinNormMethod::Penalized, 1e-8, 1).unwrap();
    let b = solve_min_norm_separation(&[2; 4], 4, LpmVariant::Vanilla, &[], MinNormMethod::Alternating, 1e-8, 1).unwrap();
    for s in [&a, &b] {
        assert!(geometry_report(&s.state).etf_dev <= 1e-3);
    }
    assert!((a.objective - b.objective).abs() <= 1e-3 * a.objective);

    for (variant, ratio) in [(LpmVariant::ItH, 10), (LpmVariant::ItW, 10), (LpmVariant::Vanilla, 5)] {
        let counts = step_counts(4, ratio);
        let temps = sqrt_temperatures(&counts);
        let p = solve_min_norm_separation(&counts, 4, variant, &temps, MinNormMethod::Penalized, 1e-8, 2).unwrap();
        let q = solve_min_norm_separation(&counts, 4, variant, &temps, MinNormMethod::Alternating, 1e-8, 2).unwrap();
        assert!((p.objective - q.objective).abs() <= 1e-3 * p.objective, "{variant:?}: {} vs {}", p.objective, q.objective);
    }
}

#[test]
fn nc1_of_noisy_features_matches_expectation() {
    let (k, d, n, sigma) = (3, 5, 4000, 0.05);
    let means = simplex_etf(k, d).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let blocks: Vec<Array2<f64>> = (0..k)
        .map(|c| {
            Array2::from_shape_fn((n, d), |(_, j)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                means[[c, j]] + sigma * z
            })
        })
        .collect();
    let state = LayerPeeledState::new(means.clone(), PeeledFeatures::Full(blocks), vec![n; k], Vec::new(), LpmVariant::Vanilla).unwrap();
    let avg_norm: f64 = means.rows().into_iter().map(|r| r.dot(&r)).sum::<f64>() / k as f64;
    let want = d as f64 * sigma * sigma / avg_norm;
    let got = geometry_report(&state).nc1;
    assert!((got / want - 1.0).abs() <= 0.1, "{got} vs {want}");
}

#[test]
fn etf_state_has_exact_geometry() {
    let e = simplex_etf(4, 6).unwrap();
    let state = LayerPeeledState::new(e.clone(), PeeledFeatures::Collapsed(e), vec![3, 3, 1, 1], Vec::new(), LpmVariant::Vanilla).unwrap();
    let g = geometry_report(&state);
    assert!(g.etf_dev <= 1e-12);
    assert_eq!(g.nc1, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            assert!((-1.0..=1.0).contains(&g.mean_cos[[i, j]]) && (-1.0..=1.0).contains(&g.clf_cos[[i, j]]));
        }
    }
    assert!(LayerPeeledState::random(&[1, 1, 1], 2, LpmVariant::Vanilla, &[], FeatureMode::Full, 1.0, 0).is_err());
}
