//! The four simulation designs, ISE evaluation and the per-replication
//! estimator runner.
//!
//! With `xi` uniform on `[0, 1]` and `xi_t ~ N(0, 1)`:
//!
//! | model | `X`                      | `T`                 | `Y*(t)`                         |
//! |-------|--------------------------|---------------------|---------------------------------|
//! | 1     | `0.3 + 0.4 xi`           | `X + xi_t`          | `(t - 0.5)^2 + X + N(0,1)`      |
//! | 2     | `0.3 (xi_1 + xi_2)`      | `1 + X^2 + xi_t`    | `logistic(6t - 6) + X + xi`     |
//! | 3     | `0.2 (xi_1 + .. + xi_10)`| `X + xi_t`          | `-t + sqrt(X) + xi`             |
//! | 4     | `0.2 + 0.6 xi`           | `sqrt(X) - 0.7 + xi_t` | `t + exp(X) + N(0,1)`        |
//!
//! The law of `T` is a normal location mixture over `X`; its density,
//! distribution function and quantiles come from a Gauss-Legendre rule over
//! the law of `X`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::deconv_kernel::{ErrorKind, ErrorModel, FastDeconv, GaussianKernel, KernelSpec, SmoothingKernel};
use crate::error::{Error, Result};
use crate::estimator::{
    curve_from_weights, fit_grid_weights, mu_hat_with_design, naive_mu, span, AdrfCurve,
    EstimatorConfig, EstimatorVariant, ObservedSample, SieveDesign,
};
use crate::linalg::Matrix;
use crate::math;
use crate::quadrature::GaussLegendre;
use crate::rng;
use crate::tuning::{plug_in_bandwidth_with, two_step_tune, SmoothingParams, TuningConfig, PLUG_IN_GRID_N};

pub const LAPLACE_RATIO: f64 = 0.25;
pub const GAUSSIAN_RATIO: f64 = 0.2;
pub const MIN_SAMPLE_SIZE: usize = 50;
pub const ISE_RANGE: (f64, f64) = (0.1, 0.9);
pub const GRID_RANGE: (f64, f64) = (0.05, 0.95);
pub const GRID_N: usize = 201;
pub const MAX_SKIPPED_FRACTION: f64 = 0.2;

/// `E[sqrt(X)]` for model 3 (`X = 0.2 x Irwin-Hall(10)`).
pub const MODEL3_MEAN_SQRT_X: f64 = 0.995_696_612_684_752_6;
/// `E[sqrt(X)]` for model 4 (`X ~ U(0.2, 0.8)`).
pub const MODEL4_MEAN_SQRT_X: f64 = 0.695_665_592_999_934_6;
/// `E[exp(X)] = (e^0.8 - e^0.2) / 0.6` for model 4.
pub const MODEL4_MEAN_EXP_X: f64 = 1.673_563_617_220_496_5;
/// `1 + var(X^2)` for model 2: `0.3^4 (31/15 - 49/36)`.
pub const MODEL2_VAR_T: f64 = 1.0 + 0.0081 * (127.0 / 180.0);

const GENERATE_STREAM: u64 = 0x6E4E;
const TUNING_STREAM: u64 = 0x7E4E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SimModel {
    Model1,
    Model2,
    Model3,
    Model4,
}

impl SimModel {
    pub const ALL: [SimModel; 4] = [SimModel::Model1, SimModel::Model2, SimModel::Model3, SimModel::Model4];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(SimModel::Model1),
            2 => Ok(SimModel::Model2),
            3 => Ok(SimModel::Model3),
            4 => Ok(SimModel::Model4),
            _ => Err(Error::param(alloc::format!("simulation model id must be 1, 2, 3 or 4, got {id}"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            SimModel::Model1 => 1,
            SimModel::Model2 => 2,
            SimModel::Model3 => 3,
            SimModel::Model4 => 4,
        }
    }

    /// `E[T | X = x]`.
    pub fn treatment_mean(self, x: f64) -> f64 {
        match self {
            SimModel::Model1 | SimModel::Model3 => x,
            SimModel::Model2 => 1.0 + x * x,
            SimModel::Model4 => math::sqrt(x) - 0.7,
        }
    }

    /// `var(T)`, used to calibrate the measurement-error variance.
    pub fn var_t(self) -> f64 {
        match self {
            SimModel::Model1 => 1.0 + 0.16 / 12.0,
            SimModel::Model2 => MODEL2_VAR_T,
            SimModel::Model3 => 1.0 + 1.0 / 30.0,
            SimModel::Model4 => 1.5 - MODEL4_MEAN_SQRT_X * MODEL4_MEAN_SQRT_X,
        }
    }

    /// The true average dose-response `mu(t) = E[Y*(t)]`.
    pub fn true_mu(self, t: f64) -> f64 {
        match self {
            SimModel::Model1 => (t - 0.5) * (t - 0.5) + 0.5,
            SimModel::Model2 => 1.0 / (1.0 + math::exp(6.0 - 6.0 * t)) + 0.8,
            SimModel::Model3 => -t + MODEL3_MEAN_SQRT_X + 0.5,
            SimModel::Model4 => t + MODEL4_MEAN_EXP_X,
        }
    }

    /// Quadrature representation of the law of `X` and hence of `T`.
    pub fn law(self) -> TreatmentLaw {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut push = |rule: &GaussLegendre, a: f64, b: f64, density: &dyn Fn(f64) -> f64, scale: f64| {
            let (xs, ws) = rule.on_interval(a, b);
            for (x, w) in xs.into_iter().zip(ws) {
                nodes.push(x * scale);
                weights.push(w * density(x));
            }
        };
        match self {
            SimModel::Model1 => push(&GaussLegendre::new(64), 0.3, 0.7, &|_| 2.5, 1.0),
            SimModel::Model2 => {
                let rule = GaussLegendre::new(64);
                push(&rule, 0.0, 0.3, &|x| x / 0.09, 1.0);
                push(&rule, 0.3, 0.6, &|x| (0.6 - x) / 0.09, 1.0);
            }
            SimModel::Model3 => {
                let rule = GaussLegendre::new(32);
                for k in 0..10 {
                    push(&rule, k as f64, (k + 1) as f64, &irwin_hall_10, 0.2);
                }
            }
            SimModel::Model4 => push(&GaussLegendre::new(64), 0.2, 0.8, &|_| 1.0 / 0.6, 1.0),
        }
        TreatmentLaw {
            model: self,
            nodes,
            weights,
        }
    }

    /// Draws `(X, T, Y)` for one unit.
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> (f64, f64, f64) {
        let mut u = || rng.random::<f64>();
        let x = match self {
            SimModel::Model1 => 0.3 + 0.4 * u(),
            SimModel::Model2 => 0.3 * (u() + u()),
            SimModel::Model3 => 0.2 * (0..10).map(|_| u()).sum::<f64>(),
            SimModel::Model4 => 0.2 + 0.6 * u(),
        };
        let z: f64 = StandardNormal.sample(rng);
        let t = self.treatment_mean(x) + z;
        let y = match self {
            SimModel::Model1 => {
                let e: f64 = StandardNormal.sample(rng);
                (t - 0.5) * (t - 0.5) + x + e
            }
            SimModel::Model2 => 1.0 / (1.0 + math::exp(6.0 - 6.0 * t)) + x + rng.random::<f64>(),
            SimModel::Model3 => -t + math::sqrt(x) + rng.random::<f64>(),
            SimModel::Model4 => {
                let e: f64 = StandardNormal.sample(rng);
                t + math::exp(x) + e
            }
        };
        (x, t, y)
    }
}

/// Density of the sum of 10 independent uniforms.
pub fn irwin_hall_10(w: f64) -> f64 {
    if !(0.0..=10.0).contains(&w) {
        return 0.0;
    }
    let w = if w > 5.0 { 10.0 - w } else { w };
    let mut binom = 1.0;
    let mut sum = 0.0;
    let mut k = 0usize;
    while (k as f64) <= w && k <= 10 {
        let term = binom * math::powi(w - k as f64, 9);
        sum += if k % 2 == 0 { term } else { -term };
        binom = binom * (10 - k) as f64 / (k + 1) as f64;
        k += 1;
    }
    (sum / 362_880.0).max(0.0)
}

/// The marginal law of `T` as a finite normal location mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentLaw {
    model: SimModel,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TreatmentLaw {
    pub fn model(&self) -> SimModel {
        self.model
    }

    /// `E[f(X)]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// `f_T(t)`.
    pub fn density(&self, t: f64) -> f64 {
        if self.model == SimModel::Model1 {
            return (math::norm_cdf(t - 0.3) - math::norm_cdf(t - 0.7)) / 0.4;
        }
        let m = self.model;
        self.expect(|x| math::norm_pdf(t - m.treatment_mean(x)))
    }

    /// `F_T(t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if self.model == SimModel::Model1 {
            let g = |z: f64| z * math::norm_cdf(z) + math::norm_pdf(z);
            return (g(t - 0.3) - g(t - 0.7)) / 0.4;
        }
        let m = self.model;
        self.expect(|x| math::norm_cdf(t - m.treatment_mean(x)))
    }

    /// `F_T^{-1}(p)` by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-12.0, 14.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// `pi0(t, x) = f_T(t) / f_{T|X}(t | x)`.
    pub fn pi0(&self, t: f64, x: f64) -> f64 {
        self.density(t) / math::norm_pdf(t - self.model.treatment_mean(x))
    }
}

/// Measurement-error setting of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum SimError {
    /// `var(U) = 0.25 var(T)`.
    Laplace,
    /// `var(U) = 0.2 var(T)`.
    Gaussian,
    None,
}

impl SimError {
    pub fn ratio(self) -> f64 {
        match self {
            SimError::Laplace => LAPLACE_RATIO,
            SimError::Gaussian => GAUSSIAN_RATIO,
            SimError::None => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimError::Laplace => "laplace",
            SimError::Gaussian => "gaussian",
            SimError::None => "none",
        }
    }

    pub fn label(self) -> u64 {
        match self {
            SimError::Laplace => 1,
            SimError::Gaussian => 2,
            SimError::None => 0,
        }
    }

    pub fn error_model(self, model: SimModel) -> Result<ErrorModel> {
        let v = self.ratio() * model.var_t();
        match self {
            SimError::Laplace => ErrorModel::laplace(v),
            SimError::Gaussian => ErrorModel::gaussian(v),
            SimError::None => Ok(ErrorModel::none()),
        }
    }
}

/// One simulated data set with its latent treatments.
#[derive(Debug, Clone)]
pub struct SimData {
    pub model: SimModel,
    pub error: SimError,
    pub sample: ObservedSample,
    /// The true treatments `T_i`.
    pub t: Vec<f64>,
}

/// Draws `n` units from `model` and contaminates `T` with `error`.
pub fn generate(model: SimModel, n: usize, error: SimError, seed: u64) -> Result<SimData> {
    if n < MIN_SAMPLE_SIZE {
        return Err(Error::param("simulated samples need n >= 50"));
    }
    let em = error.error_model(model)?;
    let mut rng = rng::stream(seed, &[GENERATE_STREAM]);
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    let mut ss = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, t, y) = model.draw(&mut rng);
        let u = em.sample(&mut rng);
        xs.push(x);
        ts.push(t);
        ss.push(t + u);
        ys.push(y);
    }
    let sample = ObservedSample::new(ss, Matrix::column(&xs), ys, em)?;
    Ok(SimData {
        model,
        error,
        sample,
        t: ts,
    })
}

/// 201 points over `[q_0.05, q_0.95]` of `T`, the ISE range `[q_0.1, q_0.9]`.
pub fn evaluation_grid(law: &TreatmentLaw, n: usize) -> (Vec<f64>, (f64, f64)) {
    let grid = math::lin_space(law.quantile(GRID_RANGE.0), law.quantile(GRID_RANGE.1), n);
    (grid, (law.quantile(ISE_RANGE.0), law.quantile(ISE_RANGE.1)))
}

/// An ISE value and the number of in-range points that were interpolated.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ise {
    pub value: f64,
    pub interpolated: usize,
}

/// Trapezoid integral of `(mu - truth)^2` over `range`.
///
/// Non-finite values of `mu` count as skipped and are linearly
/// interpolated from the nearest finite neighbours.
pub fn ise(grid: &[f64], mu: &[f64], truth: &dyn Fn(f64) -> f64, range: (f64, f64)) -> Result<Ise> {
    if grid.len() != mu.len() || grid.len() < 2 {
        return Err(Error::param("grid and curve must have equal length >= 2"));
    }
    let (a, b) = range;
    if !(a < b) || a < grid[0] || b > grid[grid.len() - 1] {
        return Err(Error::param("the ISE range must lie inside the grid"));
    }
    let known: Vec<usize> = (0..mu.len()).filter(|&i| mu[i].is_finite()).collect();
    if known.is_empty() {
        return Err(Error::TooManySkipped {
            skipped: grid.len(),
            total: grid.len(),
        });
    }
    let in_range: Vec<usize> = (0..grid.len()).filter(|&i| grid[i] >= a && grid[i] <= b).collect();
    let skipped = in_range.iter().filter(|&&i| !mu[i].is_finite()).count();
    if skipped as f64 > MAX_SKIPPED_FRACTION * in_range.len() as f64 {
        return Err(Error::TooManySkipped {
            skipped,
            total: in_range.len(),
        });
    }
    let filled: Vec<f64> = (0..mu.len())
        .map(|i| {
            if mu[i].is_finite() {
                return mu[i];
            }
            let p = known.partition_point(|&k| k < i);
            match (p.checked_sub(1).map(|q| known[q]), known.get(p).copied()) {
                (Some(l), Some(r)) => mu[l] + (mu[r] - mu[l]) * (grid[i] - grid[l]) / (grid[r] - grid[l]),
                (Some(l), None) => mu[l],
                (None, Some(r)) => mu[r],
                (None, None) => unreachable!(),
            }
        })
        .collect();
    let at = |t: f64| -> f64 {
        let j = grid.partition_point(|&g| g <= t).clamp(1, grid.len() - 1);
        let (g0, g1) = (grid[j - 1], grid[j]);
        filled[j - 1] + (filled[j] - filled[j - 1]) * (t - g0) / (g1 - g0)
    };
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(in_range.len() + 2);
    pts.push((a, at(a)));
    for &i in &in_range {
        if grid[i] > a && grid[i] < b {
            pts.push((grid[i], filled[i]));
        }
    }
    pts.push((b, at(b)));
    let sq = |(t, m): (f64, f64)| {
        let d = m - truth(t);
        d * d
    };
    let value = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (sq(w[0]) + sq(w[1])))
        .sum();
    Ok(Ise {
        value,
        interpolated: skipped,
    })
}

/// Estimators compared in Monte Carlo studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EstimatorLabel {
    /// Weighted estimator with two-step tuning.
    CmTuned,
    /// Weighted estimator with ISE-minimizing parameters from a grid.
    CmGridOptimal,
    /// Naive estimator with its own two-step tuning.
    NvTuned,
    /// Naive estimator with ISE-minimizing parameters from a grid.
    NvGridOptimal,
    /// Known `pi0` weights, ISE-minimizing `h`.
    OraclePi0,
}

impl EstimatorLabel {
    pub const ALL: [EstimatorLabel; 5] = [
        EstimatorLabel::CmTuned,
        EstimatorLabel::CmGridOptimal,
        EstimatorLabel::NvTuned,
        EstimatorLabel::NvGridOptimal,
        EstimatorLabel::OraclePi0,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorLabel::CmTuned => "cm_tuned",
            EstimatorLabel::CmGridOptimal => "cm_grid",
            EstimatorLabel::NvTuned => "nv_tuned",
            EstimatorLabel::NvGridOptimal => "nv_grid",
            EstimatorLabel::OraclePi0 => "oracle_pi0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

/// Candidate smoothing parameters for the grid-optimal estimators.
/// Bandwidths are multiples of a per-estimator reference.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSearchConfig {
    pub k_values: Vec<usize>,
    pub h0_multipliers: Vec<f64>,
    pub h_multipliers: Vec<f64>,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            k_values: alloc::vec![2, 3, 4],
            h0_multipliers: alloc::vec![0.5, 0.75, 1.0, 1.5, 2.0],
            h_multipliers: math::log_space(0.3, 3.0, 12),
        }
    }
}

/// Everything a replication needs besides the data-generating setting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyConfig {
    pub estimator: EstimatorConfig,
    pub tuning: TuningConfig,
    pub grid_search: GridSearchConfig,
    pub grid_n: usize,
    pub estimators: Vec<EstimatorLabel>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            tuning: TuningConfig::default(),
            grid_search: GridSearchConfig::default(),
            grid_n: GRID_N,
            estimators: EstimatorLabel::ALL.to_vec(),
        }
    }
}

/// One estimator's result in one replication.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorRun {
    pub label: EstimatorLabel,
    pub ise: Option<f64>,
    pub interpolated: usize,
    pub failure: Option<String>,
    pub params: Option<SmoothingParams>,
}

/// All estimator runs on one simulated data set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReplicationOutcome {
    pub model: SimModel,
    pub n: usize,
    pub error: SimError,
    pub rep: usize,
    pub seed: u64,
    pub runs: Vec<EstimatorRun>,
}

impl ReplicationOutcome {
    pub fn run(&self, label: EstimatorLabel) -> Option<&EstimatorRun> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Seed of replication `rep` of the `(model, n, error)` cell.
pub fn replication_seed(master: u64, model: SimModel, n: usize, error: SimError, rep: usize) -> u64 {
    rng::derive_seed(master, &[model.id() as u64, n as u64, error.label(), rep as u64])
}

/// Generates one data set and runs every requested estimator on a shared
/// grid. Estimator failures are recorded, not propagated.
pub fn run_replication(
    model: SimModel,
    n: usize,
    error: SimError,
    rep: usize,
    master_seed: u64,
    config: &StudyConfig,
) -> Result<ReplicationOutcome> {
    let seed = replication_seed(master_seed, model, n, error, rep);
    let data = generate(model, n, error, seed)?;
    let law = model.law();
    let (grid, range) = evaluation_grid(&law, config.grid_n);
    let truth = |t: f64| model.true_mu(t);
    let mut tuning = config.tuning.clone();
    tuning.simex.seed = rng::derive_seed(seed, &[TUNING_STREAM]);

    let runs = config
        .estimators
        .iter()
        .map(|&label| {
            let res: Result<(Ise, SmoothingParams)> = match label {
                EstimatorLabel::CmTuned => two_step_tune(&data.sample, &config.estimator, &tuning).and_then(|p| {
                    let design = SieveDesign::for_sample(&data.sample, &config.estimator, p.k)?;
                    let c = mu_hat_with_design(&data.sample, &design, &p, &config.estimator, &grid)?;
                    Ok((ise(&grid, &c.mu, &truth, range)?, p))
                }),
                EstimatorLabel::NvTuned => naive_mu(&data.sample, &config.estimator, &tuning, &grid)
                    .and_then(|c| Ok((ise(&grid, &c.mu, &truth, range)?, c.params))),
                EstimatorLabel::CmGridOptimal => {
                    grid_optimal(&data.sample, &config.estimator, &config.grid_search, &grid, &truth, range, false)
                }
                EstimatorLabel::NvGridOptimal => {
                    grid_optimal(&data.sample, &config.estimator, &config.grid_search, &grid, &truth, range, true)
                }
                EstimatorLabel::OraclePi0 => {
                    oracle_optimal(&data, &law, &config.estimator, &config.grid_search, &grid, &truth, range)
                }
            };
            match res {
                Ok((v, p)) => EstimatorRun {
                    label,
                    ise: Some(v.value),
                    interpolated: v.interpolated,
                    failure: None,
                    params: Some(p),
                },
                Err(e) => EstimatorRun {
                    label,
                    ise: None,
                    interpolated: 0,
                    failure: Some(e.to_string()),
                    params: None,
                },
            }
        })
        .collect();
    Ok(ReplicationOutcome {
        model,
        n,
        error,
        rep,
        seed,
        runs,
    })
}

fn keep_best(best: &mut Option<(Ise, SmoothingParams)>, curve: &AdrfCurve, truth: &dyn Fn(f64) -> f64, range: (f64, f64)) {
    if let Ok(v) = ise(&curve.grid, &curve.mu, truth, range) {
        if best.as_ref().is_none_or(|(b, _)| v.value < b.value) {
            *best = Some((v, curve.params.clone()));
        }
    }
}

/// Silverman's rule `1.06 sd n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let (_, var) = math::mean_var(values);
    1.06 * math::sqrt(var) * math::powf(values.len() as f64, -0.2)
}

/// ISE-minimizing `(K, h0, h)` over the search grid. The weighted
/// estimator scales both bandwidths by the deconvolution plug-in
/// bandwidth; the naive one scales `h0` by the error-free plug-in bandwidth
/// and `h` by Silverman's rule.
fn grid_optimal(
    sample: &ObservedSample,
    estimator: &EstimatorConfig,
    search: &GridSearchConfig,
    grid: &[f64],
    truth: &dyn Fn(f64) -> f64,
    range: (f64, f64),
    naive: bool,
) -> Result<(Ise, SmoothingParams)> {
    let base = if naive { sample.without_error() } else { sample.clone() };
    let h_pi = plug_in_bandwidth_with(base.s(), base.error(), estimator.kernel, PLUG_IN_GRID_N)?;
    let h_ref = if naive { silverman_bandwidth(base.s()) } else { h_pi };
    let sp = span(base.s(), grid);
    let variant = if naive { EstimatorVariant::Naive } else { EstimatorVariant::Weighted };
    let hs: Vec<f64> = search.h_multipliers.iter().map(|m| m * h_ref).collect();
    let regression: Vec<Regression> = if naive {
        hs.iter().map(|&h| Regression::Gaussian(GaussianKernel { h })).collect()
    } else {
        comparator_kernels(base.error(), estimator.kernel, &hs, sp)?
            .into_iter()
            .map(Regression::Deconv)
            .collect()
    };
    let weight_kernels = search
        .h0_multipliers
        .iter()
        .map(|m| FastDeconv::tabulated(base.error(), estimator.kernel, m * h_pi, sp))
        .collect::<Result<Vec<_>>>()?;
    let mut best = None;
    let mut last_err = None;
    for &k in &search.k_values {
        let design = match SieveDesign::for_sample(&base, estimator, k) {
            Ok(d) => d,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        for wk in &weight_kernels {
            let h0 = wk.bandwidth();
            let weights = fit_grid_weights(&base, &design, wk, estimator.criterion, grid)?;
            for (&h, rk) in hs.iter().zip(&regression) {
                let params = SmoothingParams::manual(k, h0, h)?;
                let curve = curve_from_weights(&base, &weights, rk.as_kernel(), grid, params, variant)?;
                keep_best(&mut best, &curve, truth, range);
            }
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::TuningFailed("no candidate produced a usable curve".into()))
    })
}

fn oracle_optimal(
    data: &SimData,
    law: &TreatmentLaw,
    estimator: &EstimatorConfig,
    search: &GridSearchConfig,
    grid: &[f64],
    truth: &dyn Fn(f64) -> f64,
    range: (f64, f64),
) -> Result<(Ise, SmoothingParams)> {
    let sample = &data.sample;
    let h_pi = plug_in_bandwidth_with(sample.s(), sample.error(), estimator.kernel, PLUG_IN_GRID_N)?;
    let x = sample.x().col(0);
    let weights: Vec<Option<(Vec<f64>, bool)>> = grid
        .iter()
        .map(|&t| {
            let f = law.density(t);
            let m = law.model();
            Some((
                x.iter().map(|&xi| f / math::norm_pdf(t - m.treatment_mean(xi))).collect(),
                true,
            ))
        })
        .collect();
    let sp = span(sample.s(), grid);
    let mut best = None;
    for &m in &search.h_multipliers {
        let h = m * h_pi;
        let rk = comparator_kernels(sample.error(), estimator.kernel, &[h], sp)?.remove(0);
        let params = SmoothingParams::manual(1, h, h)?;
        let curve = curve_from_weights(sample, &weights, &rk, grid, params, EstimatorVariant::Oracle)?;
        keep_best(&mut best, &curve, truth, range);
    }
    best.ok_or_else(|| Error::TuningFailed("no oracle bandwidth produced a usable curve".into()))
}

/// Regression kernels for the Monte Carlo comparators; the plain kernel is
/// tabulated as well.
fn comparator_kernels(error: &ErrorModel, kernel: KernelSpec, hs: &[f64], span: f64) -> Result<Vec<FastDeconv>> {
    if error.kind() == ErrorKind::None {
        return hs.iter().map(|&h| FastDeconv::tabulated(error, kernel, h, span)).collect();
    }
    FastDeconv::family(error, kernel, hs, span)
}

enum Regression {
    Deconv(FastDeconv),
    Gaussian(GaussianKernel),
}

impl Regression {
    fn as_kernel(&self) -> &dyn SmoothingKernel {
        match self {
            Regression::Deconv(k) => k,
            Regression::Gaussian(k) => k,
        }
    }
}

/// Root-mean-square difference between fitted and true weights at `t`,
/// over the sample points.
pub fn weight_rms_error(data: &SimData, t: f64, k: usize, h0: f64, estimator: &EstimatorConfig) -> Result<f64> {
    let sample = &data.sample;
    let law = data.model.law();
    let design = SieveDesign::for_sample(sample, estimator, k)?;
    let wk = FastDeconv::new(sample.error(), estimator.kernel, h0, span(sample.s(), &[t]))?;
    let (_, pis, _) = design.fit_weights(t, sample.s(), &wk, estimator.criterion, None)?;
    let x = sample.x().col(0);
    let ss: f64 = pis
        .iter()
        .zip(&x)
        .map(|(&p, &xi)| {
            let d = p - law.pi0(t, xi);
            d * d
        })
        .sum();
    Ok(math::sqrt(ss / pis.len() as f64))
}

/// Quartiles of one estimator's ISE over the replications of one cell.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorSummary {
    pub model: SimModel,
    pub n: usize,
    pub error: SimError,
    pub label: EstimatorLabel,
    pub reps: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
}

/// Groups outcomes by `(model, n, error, estimator)`; the order of
/// `outcomes` does not affect the result.
pub fn summarize(outcomes: &[ReplicationOutcome]) -> Vec<EstimatorSummary> {
    let mut cells: BTreeMap<(SimModel, usize, SimError, EstimatorLabel), Vec<(usize, Option<f64>)>> = BTreeMap::new();
    for o in outcomes {
        for r in &o.runs {
            cells
                .entry((o.model, o.n, o.error, r.label))
                .or_default()
                .push((o.rep, r.ise));
        }
    }
    cells
        .into_iter()
        .map(|((model, n, error, label), mut v)| {
            v.sort_by_key(|(rep, _)| *rep);
            let ok: Vec<f64> = v.iter().filter_map(|(_, i)| *i).collect();
            let sorted = math::sorted_copy(&ok);
            let q = |p: f64| if sorted.is_empty() { f64::NAN } else { math::quantile_sorted(&sorted, p) };
            let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
            let failures = v.len() - ok.len();
            EstimatorSummary {
                model,
                n,
                error,
                label,
                reps: v.len(),
                failures,
                failure_rate: failures as f64 / v.len() as f64,
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
                mean,
            }
        })
        .collect()
}
