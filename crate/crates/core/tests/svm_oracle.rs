use feedmon_core::reference::{kkt_residual, median_pairwise_distance, projected_gradient_dual};
use feedmon_core::svm::{dual_objective, resolve_gamma, train, GammaSpec, LabeledFeature, PreparedProblem, SvmConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Two Gaussian blobs in 2-D, `n` points per class.
fn blobs(n: usize, gap: f64, seed: u64) -> Vec<LabeledFeature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.6).unwrap();
    let mut out = Vec::new();
    for i in 0..2 * n {
        let pos = i % 2 == 0;
        let cx = if pos { gap / 2.0 } else { -gap / 2.0 };
        out.push(LabeledFeature::new(
            vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)],
            pos,
        ));
    }
    out
}

fn false_negatives(m: &feedmon_core::svm::SvmModel, data: &[LabeledFeature]) -> usize {
    data.iter().filter(|d| d.y > 0 && m.decide(&d.x).unwrap() <= 0.0).count()
}

#[test]
fn forty_point_separable_set_matches_reference() {
    let data = blobs(20, 6.0, 3);
    let cfg = SvmConfig::default();
    let prob = PreparedProblem::new(&data, cfg.gamma, 0).unwrap();
    let (model, sol) = prob.solve(&cfg).unwrap();
    assert!(model.converged);
    for d in &data {
        let m = model.decide(&d.x).unwrap();
        assert_eq!(m > 0.0, d.y > 0, "training point misclassified, margin {m}");
    }
    let ours = dual_objective(&prob.kernel, &prob.y, &sol.alpha);
    let (_, reference) = projected_gradient_dual(&prob.kernel, &prob.y, cfg.c_pos(), cfg.c_neg(), 20_000);
    assert!((ours - reference).abs() < 1e-3, "SMO {ours} vs reference {reference}");
    assert!(ours >= reference - 1e-3);
    let kkt = kkt_residual(&prob.kernel, &prob.y, &sol.alpha, sol.rho, cfg.c_pos(), cfg.c_neg());
    assert!(kkt < cfg.kkt_tolerance, "KKT residual {kkt}");
}

#[test]
fn overlapping_sets_with_unequal_weights_match_reference() {
    for seed in 0..5 {
        let data = blobs(25, 1.0, seed);
        let cfg = SvmConfig {
            w_pos: 4.0,
            w_neg: 0.5,
            gamma: GammaSpec::Value(0.5),
            ..SvmConfig::default()
        };
        let prob = PreparedProblem::new(&data, cfg.gamma, seed).unwrap();
        let (_, sol) = prob.solve(&cfg).unwrap();
        let ours = dual_objective(&prob.kernel, &prob.y, &sol.alpha);
        let (_, reference) = projected_gradient_dual(&prob.kernel, &prob.y, cfg.c_pos(), cfg.c_neg(), 20_000);
        assert!((ours - reference).abs() < 1e-3, "seed {seed}: SMO {ours} vs reference {reference}");
        let kkt = kkt_residual(&prob.kernel, &prob.y, &sol.alpha, sol.rho, cfg.c_pos(), cfg.c_neg());
        assert!(kkt < cfg.kkt_tolerance, "seed {seed}: KKT residual {kkt}");
    }
}

#[test]
fn raising_w_pos_pulls_in_an_outlier() {
    let mut data = blobs(20, 5.0, 9);
    // anomalous point deep inside the nominal cluster
    data.push(LabeledFeature::new(vec![-2.5, 0.1], true));
    let outlier = data.last().unwrap().x.clone();
    let base = SvmConfig {
        gamma: GammaSpec::Value(0.5),
        ..SvmConfig::default()
    };
    let low = train(&data, &base, 0).unwrap();
    let high = train(&data, &SvmConfig { w_pos: 100.0, ..base }, 0).unwrap();
    let m_low = low.decide(&outlier).unwrap();
    let m_high = high.decide(&outlier).unwrap();
    assert!(m_high > m_low, "outlier margin {m_low} -> {m_high}");
    assert!(false_negatives(&high, &data) <= false_negatives(&low, &data));
}

#[test]
fn decide_equals_direct_kernel_expansion() {
    let data = blobs(15, 2.0, 4);
    let m = train(&data, &SvmConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0)];
        let z: Vec<f64> = (0..2).map(|d| (x[d] - m.feature_means[d]) / m.feature_stds[d]).collect();
        let mut direct = m.bias;
        for (sv, c) in m.support_vectors.iter().zip(&m.dual_coefficients) {
            let d2: f64 = sv.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum();
            direct += c * (-m.gamma * d2).exp();
        }
        let got = m.decide(&x).unwrap();
        assert!((got - direct).abs() <= 1e-12, "{got} vs {direct}");
        assert_eq!(got, m.decide(&x).unwrap());
    }
}

#[test]
fn cross_kernel_margins_equal_decide() {
    let data = blobs(15, 2.0, 5);
    let cfg = SvmConfig::default();
    let prob = PreparedProblem::new(&data, cfg.gamma, 0).unwrap();
    let (model, sol) = prob.solve(&cfg).unwrap();
    let queries: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.3 - 3.0, 0.5]).collect();
    let refs: Vec<&[f64]> = queries.iter().map(Vec::as_slice).collect();
    let cross = prob.cross_kernel(&refs);
    let expansion = prob.expansion(&sol);
    assert_eq!(cross.n_queries(), queries.len());
    for (q, x) in queries.iter().enumerate() {
        assert_eq!(cross.margin(q, &expansion), model.decide(x).unwrap());
    }
}

#[test]
fn warm_start_reaches_the_cold_optimum() {
    let data = blobs(25, 1.5, 6);
    let prob = PreparedProblem::new(&data, GammaSpec::Value(0.4), 0).unwrap();
    let mut last = None;
    for w in [0.5, 1.0, 4.0, 16.0] {
        let cfg = SvmConfig {
            w_pos: w,
            gamma: GammaSpec::Value(0.4),
            ..SvmConfig::default()
        };
        let (_, warm) = prob.solve_from(&cfg, last.as_ref()).unwrap();
        let (_, cold) = prob.solve(&cfg).unwrap();
        let fw = dual_objective(&prob.kernel, &prob.y, &warm.alpha);
        let fc = dual_objective(&prob.kernel, &prob.y, &cold.alpha);
        assert!((fw - fc).abs() < 1e-3, "w_pos {w}: warm {fw} cold {fc}");
        last = Some(warm);
    }
}

#[test]
fn median_heuristic_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<LabeledFeature> = (0..100)
        .map(|i| LabeledFeature::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), i % 2 == 0))
        .collect();
    let refs: Vec<&[f64]> = data.iter().map(|d| d.x.as_slice()).collect();
    let med = median_pairwise_distance(&refs);
    let expected = 1.0 / (2.0 * med * med);
    let got = resolve_gamma(&data, 0);
    assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");
}

fn dataset() -> impl Strategy<Value = (Vec<LabeledFeature>, f64, f64)> {
    (4usize..30, any::<u64>(), 0.1f64..10.0, 0.1f64..10.0).prop_map(|(n, seed, wp, wn)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n)
            .map(|i| {
                let pos = i % 2 == 0 || (i > 1 && rng.random_bool(0.3));
                let shift = if pos { 0.7 } else { -0.7 };
                LabeledFeature::new(vec![shift + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], pos)
            })
            .collect();
        (data, wp, wn)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solutions_are_dual_feasible((data, wp, wn) in dataset()) {
        let cfg = SvmConfig { w_pos: wp, w_neg: wn, gamma: GammaSpec::Value(0.7), ..SvmConfig::default() };
        let prob = PreparedProblem::new(&data, cfg.gamma, 0).unwrap();
        let (model, sol) = prob.solve(&cfg).unwrap();
        let mut balance = 0.0;
        for (a, y) in sol.alpha.iter().zip(&prob.y) {
            let c = if *y > 0.0 { cfg.c_pos() } else { cfg.c_neg() };
            prop_assert!(*a >= 0.0 && *a <= c);
            balance += a * y;
        }
        prop_assert!(balance.abs() < 1e-9);
        prop_assert!(model.dual_coefficients.iter().any(|c| *c > 0.0));
        prop_assert!(model.dual_coefficients.iter().any(|c| *c < 0.0));
        if model.converged {
            let kkt = kkt_residual(&prob.kernel, &prob.y, &sol.alpha, sol.rho, cfg.c_pos(), cfg.c_neg());
            prop_assert!(kkt < cfg.kkt_tolerance, "KKT residual {}", kkt);
        }
    }

    #[test]
    fn decide_is_pure(x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let m = train(&blobs(6, 2.0, 0), &SvmConfig::default(), 0).unwrap();
        let a = m.decide(&[x, y]).unwrap();
        prop_assert!(a.is_finite());
        prop_assert_eq!(a, m.decide(&[x, y]).unwrap());
    }
}
