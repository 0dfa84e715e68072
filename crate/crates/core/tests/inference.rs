use adrf_core::estimator::SieveDesign;
use adrf_core::gel_weights::pi_values;
use adrf_core::inference::{undersmooth_factor, variance_from_influence};
use adrf_core::simlab::{generate, SimData};
use adrf_core::tuning::SmoothingParams;
use adrf_core::{
    ci_pointwise, f_t_hat, influence_values, kernel_weights, m_hat, mu_hat, plug_in_bandwidth,
    EstimatorConfig, FastDeconv, PlugIns, SimError, SimModel,
};

fn model1(n: usize, seed: u64) -> SimData {
    generate(SimModel::Model1, n, SimError::Laplace, seed).unwrap()
}

fn median_t() -> f64 {
    SimModel::Model1.law().quantile(0.5)
}

/// `(pi0, mu, m)` from the model-1 truth.
fn oracle_plugins(d: &SimData, t: f64) -> (Vec<f64>, f64, Vec<f64>) {
    let law = SimModel::Model1.law();
    let x = d.sample.x().col(0);
    let pi: Vec<f64> = x.iter().map(|&xi| law.pi0(t, xi)).collect();
    let m: Vec<f64> = x.iter().map(|&xi| (t - 0.5) * (t - 0.5) + xi).collect();
    (pi, SimModel::Model1.true_mu(t), m)
}

#[test]
fn influence_values_are_centered() {
    let d = model1(400, 1);
    let t = median_t();
    let (pi, mu, m) = oracle_plugins(&d, t);
    let p = SmoothingParams::manual(3, 0.5, 0.4).unwrap();
    let eta = influence_values(&d.sample, &p, EstimatorConfig::default().kernel, t, &PlugIns { pi: &pi, mu, m: &m }).unwrap();
    let max = eta.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(eta.iter().sum::<f64>().abs() <= 1e-10 * 400.0 * max);
}

#[test]
fn influence_values_cancel_when_outcome_equals_regression() {
    let d = model1(300, 2);
    let t = 0.3;
    let (pi, mu, m) = oracle_plugins(&d, t);
    let smp = d.sample.with_y(m.clone()).unwrap();
    let p = SmoothingParams::manual(3, 0.45, 0.45).unwrap();
    let eta = influence_values(&smp, &p, EstimatorConfig::default().kernel, t, &PlugIns { pi: &pi, mu, m: &m }).unwrap();
    assert!(eta.iter().all(|v| v.abs() <= 1e-12), "{:?}", &eta[..5]);
}

#[test]
fn band_is_symmetric_and_uses_normal_quantile() {
    let d = model1(300, 3);
    let h = plug_in_bandwidth(d.sample.s(), d.sample.error()).unwrap();
    let p = SmoothingParams::manual(3, h, h).unwrap();
    let grid = [0.0, 0.5, 1.0];
    let band = ci_pointwise(&d.sample, &p, &EstimatorConfig::default(), &grid, 0.05).unwrap();
    assert!((band.z - 1.959964).abs() < 1e-6);
    assert!((band.undersmooth_factor - 300f64.powf(-0.1)).abs() < 1e-15);
    assert!((band.params.h - h * band.undersmooth_factor).abs() < 1e-15);
    for g in 0..grid.len() {
        if band.skipped.contains(&g) {
            continue;
        }
        let up = band.hi[g] - band.mu[g];
        let down = band.mu[g] - band.lo[g];
        assert!((up - down).abs() <= 4.0 * f64::EPSILON * band.hi[g].abs().max(band.lo[g].abs()));
        assert!(band.variance[g] >= 0.0);
        assert!(band.lo[g] <= band.mu[g] && band.mu[g] <= band.hi[g]);
        assert!(band.hi[g] > band.lo[g]);
    }
    let narrow = ci_pointwise(&d.sample, &p, &EstimatorConfig::default(), &grid, 0.5).unwrap();
    assert!((narrow.z - 0.6744897501960817).abs() < 1e-9);
}

#[test]
fn alpha_outside_range_is_rejected() {
    let d = model1(100, 4);
    let p = SmoothingParams::manual(2, 0.6, 0.6).unwrap();
    for alpha in [0.0, 0.004, 0.51, 1.0] {
        assert!(ci_pointwise(&d.sample, &p, &EstimatorConfig::default(), &[0.5], alpha).is_err());
    }
}

#[test]
fn variance_is_never_negative() {
    assert_eq!(variance_from_influence(&[2.0; 10], 0.4), 0.0);
    assert!(variance_from_influence(&[1.0, -1.0, 0.5], -3.0) > 0.0);
    assert!((undersmooth_factor(1) - 1.0).abs() < 1e-15);
}

/// Sandwich variance at `t` from the given plug-ins.
fn sandwich(d: &SimData, p: &SmoothingParams, t: f64, pi: &[f64], mu: f64, m: &[f64]) -> f64 {
    let kernel = EstimatorConfig::default().kernel;
    let eta = influence_values(&d.sample, p, kernel, t, &PlugIns { pi, mu, m }).unwrap();
    let f = f_t_hat(&d.sample, p.h, kernel, &[t]).unwrap()[0];
    variance_from_influence(&eta, f)
}

fn estimated_plugins(d: &SimData, p: &SmoothingParams, t: f64) -> (Vec<f64>, f64, Vec<f64>) {
    let cfg = EstimatorConfig::default();
    let design = SieveDesign::for_sample(&d.sample, &cfg, p.k).unwrap();
    let wk = FastDeconv::new(d.sample.error(), cfg.kernel, p.h0, 50.0).unwrap();
    let w = kernel_weights(&wk, t, d.sample.s(), true).unwrap();
    let fit = adrf_core::gel_weights::solve_lambda(t, &design.basis, &w, &design.ubar, cfg.criterion, None).unwrap();
    let (pi, _) = pi_values(&fit, cfg.criterion, &design.basis);
    let mu = mu_hat(&d.sample, p, &cfg, &[t]).unwrap().mu[0];
    let m = m_hat(&d.sample, p, &cfg, t).unwrap().fitted();
    (pi, mu, m)
}

#[test]
fn estimated_and_oracle_plugins_give_similar_variance() {
    let t = median_t();
    for seed in 0..5 {
        let d = model1(2000, 10 + seed);
        let h = plug_in_bandwidth(d.sample.s(), d.sample.error()).unwrap();
        let p = SmoothingParams::manual(3, h, h).unwrap();
        let (pi, mu, m) = oracle_plugins(&d, t);
        let v0 = sandwich(&d, &p, t, &pi, mu, &m);
        let (pi, mu, m) = estimated_plugins(&d, &p, t);
        let v1 = sandwich(&d, &p, t, &pi, mu, &m);
        let r = v1 / v0;
        assert!((0.25..=4.0).contains(&r), "seed {seed}: {v0} vs {v1}");
    }
}

#[test]
fn oracle_sandwich_matches_monte_carlo_variance() {
    let t = median_t();
    let cfg = EstimatorConfig::default();
    let reps = 200;
    let mut estimates = Vec::with_capacity(reps);
    let mut sandwiches = Vec::with_capacity(reps);
    for rep in 0..reps {
        let d = model1(2000, 5000 + rep as u64);
        let p = SmoothingParams::manual(3, 0.4, 0.4).unwrap();
        estimates.push(mu_hat(&d.sample, &p, &cfg, &[t]).unwrap().mu[0]);
        let (pi, mu, m) = oracle_plugins(&d, t);
        sandwiches.push(sandwich(&d, &p, t, &pi, mu, &m));
    }
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let mc = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
    let avg = sandwiches.iter().sum::<f64>() / reps as f64;
    let r = avg / mc;
    assert!((0.5..=2.0).contains(&r), "sandwich {avg} vs Monte Carlo {mc}");
}

#[test]
fn doubling_n_narrows_the_band() {
    let t = median_t();
    let cfg = EstimatorConfig::default();
    let reps = 20;
    let mut narrower = 0;
    for rep in 0..reps {
        let width = |n: usize| {
            let d = model1(n, 300 + rep);
            let p = SmoothingParams::manual(3, 0.3, 0.3).unwrap();
            let b = ci_pointwise(&d.sample, &p, &cfg, &[t], 0.05).unwrap();
            b.hi[0] - b.lo[0]
        };
        if width(1000) < width(500) {
            narrower += 1;
        }
    }
    assert!(narrower as f64 >= 0.8 * reps as f64, "{narrower} of {reps}");
}
