use adrf_core::rng;
use adrf_core::simlab::{
    self, evaluation_grid, replication_seed, summarize, GridSearchConfig, ReplicationOutcome,
    MODEL3_MEAN_SQRT_X, MODEL4_MEAN_EXP_X, MODEL4_MEAN_SQRT_X,
};
use adrf_core::{generate, ise, run_replication, Error, EstimatorLabel, SimError, SimModel, StudyConfig};
use rand::Rng;

fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn tabulated_constants_match_ten_million_draws() {
    let n = 10_000_000;
    let mut r = rng::stream(1, &[0xC0]);
    let (m, se) = mean_se((0..n).map(|_| (0.2 * (0..10).map(|_| r.random::<f64>()).sum::<f64>()).sqrt()));
    assert!(se <= 1e-4);
    assert!((m - MODEL3_MEAN_SQRT_X).abs() <= 3.0 * se, "{m} +- {se}");

    let mut r = rng::stream(2, &[0xC0]);
    let draws: Vec<f64> = (0..n).map(|_| 0.2 + 0.6 * r.random::<f64>()).collect();
    let (m, se) = mean_se(draws.iter().map(|x| x.sqrt()));
    assert!((m - MODEL4_MEAN_SQRT_X).abs() <= 3.0 * se, "{m} +- {se}");
    let (m, se) = mean_se(draws.iter().map(|x| x.exp()));
    assert!((m - MODEL4_MEAN_EXP_X).abs() <= 3.0 * se, "{m} +- {se}");
    assert!((MODEL4_MEAN_EXP_X - (0.8f64.exp() - 0.2f64.exp()) / 0.6).abs() < 1e-15);

    let mut r = rng::stream(3, &[0xC0]);
    let (m, se) = mean_se((0..n).map(|_| 0.3 + 0.4 * r.random::<f64>()));
    assert!((m - 0.5).abs() <= 3.0 * se);
}

#[test]
fn true_mu_examples() {
    for t in [-1.0, 0.0, 0.5, 2.0] {
        assert!((SimModel::Model1.true_mu(t) - ((t - 0.5) * (t - 0.5) + 0.5)).abs() < 1e-15);
        let m4 = t + (0.8f64.exp() - 0.2f64.exp()) / 0.6;
        assert!((SimModel::Model4.true_mu(t) - m4).abs() < 1e-14);
        assert!(SimModel::ALL.iter().all(|m| m.true_mu(t).is_finite()));
    }
}

#[test]
fn error_variance_is_calibrated_to_the_treatment_variance() {
    for (err, ratio) in [(SimError::Laplace, 0.25), (SimError::Gaussian, 0.2)] {
        for model in SimModel::ALL {
            let d = generate(model, 1_000_000, err, 40 + model.id() as u64).unwrap();
            let u: Vec<f64> = d.sample.s().iter().zip(&d.t).map(|(s, t)| s - t).collect();
            let got = variance(&u) / variance(&d.t);
            assert!((got / ratio - 1.0).abs() <= 0.01, "{model:?} {err:?}: {got}");
        }
    }
}

#[test]
fn analytic_treatment_variance_matches_draws() {
    for model in SimModel::ALL {
        let d = generate(model, 400_000, SimError::None, 60 + model.id() as u64).unwrap();
        let m = d.t.iter().sum::<f64>() / d.t.len() as f64;
        let (v, se) = mean_se(d.t.iter().map(|t| (t - m) * (t - m)));
        assert!((v - model.var_t()).abs() <= 3.0 * se, "{model:?}: {v} vs {}", model.var_t());
        let law = model.law();
        let (mean_t, _) = mean_se(d.t.iter().copied());
        assert!((mean_t - law.expect(|x| model.treatment_mean(x))).abs() < 0.01);
    }
}

#[test]
fn model_one_marginals() {
    let d = generate(SimModel::Model1, 200_000, SimError::Laplace, 77).unwrap();
    let (mx, se) = mean_se(d.sample.x().col(0).into_iter());
    assert!((mx - 0.5).abs() <= 3.0 * se, "{mx} +- {se}");
    let mt = d.t.iter().sum::<f64>() / d.t.len() as f64;
    let (vt, se) = mean_se(d.t.iter().map(|t| (t - mt) * (t - mt)));
    assert!((vt - (0.16 / 12.0 + 1.0)).abs() <= 3.0 * se, "{vt} +- {se}");
}

#[test]
fn generate_is_deterministic_per_seed() {
    for err in [SimError::Laplace, SimError::Gaussian, SimError::None] {
        let a = generate(SimModel::Model2, 300, err, 5).unwrap();
        let b = generate(SimModel::Model2, 300, err, 5).unwrap();
        let c = generate(SimModel::Model2, 300, err, 6).unwrap();
        assert_eq!(a.sample.s(), b.sample.s());
        assert_eq!(a.t, b.t);
        assert_eq!(a.sample.y(), b.sample.y());
        assert_ne!(a.t, c.t);
    }
    assert!(generate(SimModel::Model3, 49, SimError::Laplace, 1).is_err());
    let d = generate(SimModel::Model3, 100, SimError::None, 1).unwrap();
    assert_eq!(d.sample.s(), &d.t[..]);
}

#[test]
fn ise_examples() {
    let grid: Vec<f64> = (0..401).map(|i| i as f64 / 400.0).collect();
    let truth = |t: f64| (3.0 * t).sin();
    let exact: Vec<f64> = grid.iter().map(|&t| truth(t)).collect();
    assert_eq!(ise(&grid, &exact, &truth, (0.0, 1.0)).unwrap().value, 0.0);
    let up: Vec<f64> = exact.iter().map(|v| v + 1.0).collect();
    assert!((ise(&grid, &up, &truth, (0.0, 1.0)).unwrap().value - 1.0).abs() <= 1e-4);

    let mut holes = up.clone();
    for i in (0..401).step_by(5).take(85) {
        holes[i] = f64::NAN;
    }
    assert!(matches!(ise(&grid, &holes, &truth, (0.0, 1.0)), Err(Error::TooManySkipped { .. })));

    let mut few = up.clone();
    for i in (1..400).step_by(10) {
        few[i] = f64::NAN;
    }
    let r = ise(&grid, &few, &truth, (0.0, 1.0)).unwrap();
    assert_eq!(r.interpolated, 40);
    assert!((r.value - 1.0).abs() <= 1e-4);
    assert!(ise(&grid, &up, &truth, (-0.1, 1.0)).is_err());
}

#[test]
fn evaluation_grid_covers_the_ise_range() {
    for model in SimModel::ALL {
        let law = model.law();
        let (grid, (a, b)) = evaluation_grid(&law, 201);
        assert_eq!(grid.len(), 201);
        assert!(grid[0] < a && b < grid[200]);
        assert!((law.cdf(a) - 0.1).abs() < 1e-10 && (law.cdf(b) - 0.9).abs() < 1e-10);
    }
}

fn small_config(estimators: Vec<EstimatorLabel>) -> StudyConfig {
    StudyConfig {
        grid_search: GridSearchConfig {
            k_values: vec![2, 3],
            h0_multipliers: vec![0.75, 1.5],
            h_multipliers: vec![0.5, 1.0, 2.0],
        },
        grid_n: 51,
        estimators,
        ..StudyConfig::default()
    }
}

#[test]
fn replications_are_deterministic() {
    let cfg = small_config(EstimatorLabel::ALL.to_vec());
    let a = run_replication(SimModel::Model1, 150, SimError::Laplace, 3, 11, &cfg).unwrap();
    let b = run_replication(SimModel::Model1, 150, SimError::Laplace, 3, 11, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seed, replication_seed(11, SimModel::Model1, 150, SimError::Laplace, 3));
    assert_eq!(a.runs.len(), 5);
    for r in &a.runs {
        assert!(r.ise.is_some_and(|v| v >= 0.0) || r.failure.is_some(), "{r:?}");
    }
    let c = run_replication(SimModel::Model1, 150, SimError::Laplace, 4, 11, &cfg).unwrap();
    assert_ne!(a.seed, c.seed);
}

#[test]
fn summaries_do_not_depend_on_outcome_order() {
    let cfg = small_config(vec![EstimatorLabel::CmGridOptimal, EstimatorLabel::NvGridOptimal]);
    let mut outcomes: Vec<ReplicationOutcome> = (0..6)
        .map(|rep| run_replication(SimModel::Model2, 120, SimError::Gaussian, rep, 5, &cfg).unwrap())
        .collect();
    let forward = summarize(&outcomes);
    outcomes.reverse();
    outcomes.swap(1, 4);
    assert_eq!(summarize(&outcomes), forward);
    assert_eq!(forward.len(), 2);
    for s in &forward {
        assert_eq!(s.reps, 6);
        assert!(s.q1 <= s.median && s.median <= s.q3);
        assert!(s.q1 >= 0.0);
    }
}

#[test]
fn failures_are_counted_in_the_summary() {
    let cfg = small_config(vec![EstimatorLabel::CmGridOptimal]);
    let mut o = run_replication(SimModel::Model1, 100, SimError::Laplace, 0, 1, &cfg).unwrap();
    let good = o.clone();
    o.rep = 1;
    o.runs[0].ise = None;
    o.runs[0].failure = Some("forced".into());
    let s = &summarize(&[good.clone(), o])[0];
    assert_eq!((s.reps, s.failures), (2, 1));
    assert_eq!(s.failure_rate, 0.5);
    assert_eq!(s.median, good.runs[0].ise.unwrap());
}

#[test]
fn error_free_weighted_and_naive_grid_optima_are_comparable() {
    let cfg = StudyConfig {
        estimators: vec![EstimatorLabel::CmGridOptimal, EstimatorLabel::NvGridOptimal],
        ..StudyConfig::default()
    };
    let outcomes: Vec<ReplicationOutcome> = (0..30)
        .map(|rep| run_replication(SimModel::Model1, 500, SimError::None, rep, 2024, &cfg).unwrap())
        .collect();
    let s = summarize(&outcomes);
    let cm = s.iter().find(|s| s.label == EstimatorLabel::CmGridOptimal).unwrap();
    let nv = s.iter().find(|s| s.label == EstimatorLabel::NvGridOptimal).unwrap();
    assert_eq!(cm.failures + nv.failures, 0);
    let ratio = cm.median / nv.median;
    assert!((1.0 / 1.3..=1.3).contains(&ratio), "cm {} nv {}", cm.median, nv.median);
}

#[test]
fn weight_error_is_finite_for_model_one() {
    let d = generate(SimModel::Model1, 300, SimError::Laplace, 8).unwrap();
    let h = adrf_core::plug_in_bandwidth(d.sample.s(), d.sample.error()).unwrap();
    let e = simlab::weight_rms_error(&d, 0.5, 3, h, &Default::default()).unwrap();
    assert!(e.is_finite() && e > 0.0 && e < 1.0, "{e}");
}
