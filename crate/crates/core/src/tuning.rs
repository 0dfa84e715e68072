//! Smoothing-parameter selection.
//!
//! * `h0 = h_PI`, the normal-reference plug-in bandwidth of the
//!   deconvolution density estimator;
//! * `K = max(2, floor(c h_PI^-2 log(h_PI + 1)))` with `c` picked by
//!   generalized cross-validation of the moment identity
//!   `E[pi0(t, X) exp(X) | T = t] = E[exp(X)]`;
//! * `h` by SIMEX: two further layers of simulated error, cross-validation
//!   at each layer, and local-constant extrapolation of the first-layer
//!   optima against the second-layer optima.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::deconv_kernel::{
    ErrorKind, ErrorModel, FastDeconv, GaussianKernel, KernelSpec, SmoothingKernel,
    EFFECTIVE_MASS_FLOOR,
};
use crate::error::{Error, Result};
use crate::estimator::{default_grid, span, EstimatorConfig, EstimatorVariant, ObservedSample, SieveDesign};
use crate::math;
use crate::rng;
use crate::sieve_basis::{BasisFamily, BasisSpec};

/// `int u^2 L(u) du = -phi_L''(0)`.
pub const KERNEL_SECOND_MOMENT: f64 = 6.0;
pub const PLUG_IN_GRID_N: usize = 400;
pub const PLUG_IN_GRID: (f64, f64) = (0.01, 4.0);
pub const MIN_PLUG_IN_N: usize = 20;
const SIMEX_STREAM: u64 = 0x5157_E7;

/// How the smoothing parameters were obtained.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Provenance {
    Manual,
    TwoStep(Box<TwoStepRecord>),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TwoStepRecord {
    pub h_pi: f64,
    pub c_tilde: f64,
    pub gcv: Vec<GcvPoint>,
    pub simex: SimexDiagnostics,
}

/// The triple `(K, h0, h)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmoothingParams {
    pub k: usize,
    pub h0: f64,
    pub h: f64,
    pub provenance: Provenance,
}

impl SmoothingParams {
    /// User-chosen parameters. `k = 1` (constant basis, unit weights) is
    /// accepted here; tuned parameters always have `k >= 2`.
    pub fn manual(k: usize, h0: f64, h: f64) -> Result<Self> {
        let p = Self {
            k,
            h0,
            h,
            provenance: Provenance::Manual,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("K must be positive"));
        }
        if !(self.h0 > 0.0 && self.h0.is_finite() && self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::param("bandwidths must be positive and finite"));
        }
        Ok(())
    }

    /// Both bandwidths multiplied by `factor`, same `K`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k: self.k,
            h0: self.h0 * factor,
            h: self.h * factor,
            provenance: self.provenance.clone(),
        }
    }

    pub fn two_step_record(&self) -> Option<&TwoStepRecord> {
        match &self.provenance {
            Provenance::TwoStep(r) => Some(r),
            Provenance::Manual => None,
        }
    }
}

/// Normal-reference AMISE of the deconvolution density estimator.
fn amise(h: f64, n: usize, r_f2: f64, error: &ErrorModel, nodes: &[f64], weights: &[f64]) -> f64 {
    let bias = 0.25 * math::powi(h, 4) * KERNEL_SECOND_MOMENT * KERNEL_SECOND_MOMENT * r_f2;
    // int_{-1}^{1} phi_L^2 / phi_U(w/h)^2 dw, folded
    let v: f64 = 2.0
        * nodes
            .iter()
            .zip(weights)
            .map(|(&w, &wt)| {
                let l = crate::deconv_kernel::kernel_ft(w);
                let u = error.cf(w / h);
                wt * l * l / (u * u)
            })
            .sum::<f64>();
    bias + v / (2.0 * PI * n as f64 * h)
}

/// Plug-in bandwidth `h_PI` with the default kernel and grid.
pub fn plug_in_bandwidth(s: &[f64], error: &ErrorModel) -> Result<f64> {
    plug_in_bandwidth_with(s, error, KernelSpec::default(), PLUG_IN_GRID_N)
}

/// Minimizes the normal-reference AMISE over `grid_n` log-spaced bandwidths
/// in `[0.01, 4] * sd(T)`, where `var(T) = var(S) - var(U)`.
pub fn plug_in_bandwidth_with(s: &[f64], error: &ErrorModel, kernel: KernelSpec, grid_n: usize) -> Result<f64> {
    if s.len() < MIN_PLUG_IN_N {
        return Err(Error::InvalidSample(alloc::format!(
            "plug-in bandwidth needs at least {MIN_PLUG_IN_N} observations"
        )));
    }
    let (_, var_s) = math::mean_var(s);
    let var_u = error.variance();
    if !(var_s > var_u) {
        return Err(Error::NoiseExceedsSignal { var_s, var_u });
    }
    let sd_t = math::sqrt(var_s - var_u);
    let r_f2 = 3.0 / (8.0 * math::sqrt(PI) * math::powi(sd_t, 5));
    let (nodes, weights) = kernel.unit_rule();
    let grid = math::log_space(PLUG_IN_GRID.0 * sd_t, PLUG_IN_GRID.1 * sd_t, grid_n);
    let mut best = (f64::INFINITY, f64::NAN);
    for &h in &grid {
        let a = amise(h, s.len(), r_f2, error, &nodes, &weights);
        if a < best.0 {
            best = (a, h);
        }
    }
    if best.1.is_nan() {
        return Err(Error::TuningFailed("AMISE is infinite on the whole bandwidth grid".into()));
    }
    Ok(best.1)
}

/// Settings of the GCV choice of `K`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KSelectConfig {
    pub c_grid: Vec<f64>,
    pub t_grid_n: usize,
    pub trim: (f64, f64),
    /// `K <= N / k_cap_divisor`.
    pub k_cap_divisor: usize,
}

impl Default for KSelectConfig {
    fn default() -> Self {
        Self {
            c_grid: math::log_space(0.01, 2.0, 12),
            t_grid_n: 20,
            trim: (0.05, 0.95),
            k_cap_divisor: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GcvPoint {
    pub c_tilde: f64,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub c_tilde: f64,
    pub gcv: Vec<GcvPoint>,
}

/// `K(c) = max(2, floor(c h^-2 log(h + 1)))`, capped at `N / divisor` and
/// moved to the nearest dimension the basis family supports.
pub fn k_from_c(c: f64, h_pi: f64, n: usize, divisor: usize, family: BasisFamily, degree: usize, r: usize) -> usize {
    let raw = math::floor(c * math::ln_1p(h_pi) / (h_pi * h_pi));
    let raw = if raw.is_finite() && raw > 0.0 { raw.min(1e9) as usize } else { 0 };
    let cap = (n / divisor.max(1)).max(2);
    let mut k = raw.max(2).min(cap);
    k = BasisSpec::smallest_valid_k(family, k, degree, r);
    while k > 2 && BasisSpec::with_degree(family, k, degree, r).is_err() {
        k -= 1;
    }
    k
}

/// Chooses `K` by generalized cross-validation over `config.c_grid`.
pub fn select_k(
    sample: &ObservedSample,
    h_pi: f64,
    estimator: &EstimatorConfig,
    config: &KSelectConfig,
) -> Result<KSelection> {
    if !(h_pi > 0.0) {
        return Err(Error::param("h_PI must be positive"));
    }
    if config.c_grid.is_empty() {
        return Err(Error::param("c grid is empty"));
    }
    let n = sample.len();
    let r = sample.x().cols();
    let t_grid = default_grid(sample.s(), config.t_grid_n, config.trim);
    let lu = FastDeconv::new(sample.error(), estimator.kernel, h_pi, span(sample.s(), &t_grid))?;
    let peak = lu.peak().abs();
    // untruncated kernel rows
    let rows: Vec<Vec<f64>> = t_grid
        .iter()
        .map(|&t| sample.s().iter().map(|&s| lu.at(t, s)).collect())
        .collect();
    let scaler = crate::sieve_basis::fit_scaler(sample.x())?;
    let ex: Vec<f64> = (0..n)
        .flat_map(|i| {
            let row = sample.x().row(i);
            let scaler = &scaler;
            (0..r).map(move |j| math::exp(scaler.scale(j, row[j])))
        })
        .collect();
    let target: Vec<f64> = (0..r).map(|j| (0..n).map(|i| ex[i * r + j]).sum::<f64>() / n as f64).collect();

    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut gcv = Vec::with_capacity(config.c_grid.len());
    for &c in &config.c_grid {
        let k = k_from_c(c, h_pi, n, config.k_cap_divisor, estimator.basis_family, estimator.spline_degree, r);
        let value = match cache.get(&k) {
            Some(v) => *v,
            None => {
                let design = SieveDesign::for_sample(sample, estimator, k)?;
                let mut errs = Vec::with_capacity(t_grid.len());
                let mut init: Option<Vec<f64>> = None;
                for (g, &t) in t_grid.iter().enumerate() {
                    let truncated: Vec<f64> = rows[g].iter().map(|v| v.max(0.0)).collect();
                    let mass: f64 = truncated.iter().sum();
                    let den: f64 = rows[g].iter().sum();
                    if !(mass > EFFECTIVE_MASS_FLOOR * peak) || !(den > EFFECTIVE_MASS_FLOOR * peak) {
                        continue;
                    }
                    let fit = crate::gel_weights::GelProblem::new(t, &design.basis, &truncated, &design.ubar)?
                        .solve(estimator.criterion, init.as_deref());
                    let (pis, _) = crate::gel_weights::pi_values(&fit, estimator.criterion, &design.basis);
                    if fit.converged {
                        init = Some(fit.lambda);
                    }
                    let mut e2 = 0.0;
                    for j in 0..r {
                        let est: f64 = (0..n).map(|i| pis[i] * ex[i * r + j] * rows[g][i]).sum::<f64>() / den;
                        e2 += (est - target[j]) * (est - target[j]);
                    }
                    errs.push((t, e2));
                }
                let integral = if errs.len() < 2 {
                    f64::INFINITY
                } else {
                    errs.windows(2).map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1)).sum()
                };
                let shrink = 1.0 - k as f64 / n as f64;
                let v = integral / (shrink * shrink);
                cache.insert(k, v);
                v
            }
        };
        gcv.push(GcvPoint { c_tilde: c, k, value });
    }
    let mut best: Option<GcvPoint> = None;
    for p in &gcv {
        if p.value.is_finite() && best.is_none_or(|b| p.value < b.value || (p.value == b.value && p.c_tilde < b.c_tilde)) {
            best = Some(*p);
        }
    }
    let best = best.ok_or_else(|| Error::TuningFailed("GCV undefined for every c".into()))?;
    Ok(KSelection {
        k: best.k,
        c_tilde: best.c_tilde,
        gcv,
    })
}

/// SIMEX settings; bandwidth grids are multipliers of `h_PI`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimexConfig {
    pub d: usize,
    pub h_grid: Vec<f64>,
    pub trim: (f64, f64),
    pub seed: u64,
    pub b_grid: Vec<f64>,
}

impl Default for SimexConfig {
    fn default() -> Self {
        Self {
            d: 35,
            h_grid: math::log_space(0.2, 5.0, 40),
            trim: (0.05, 0.95),
            seed: 0,
            b_grid: math::log_space(0.02, 2.0, 20),
        }
    }
}

impl SimexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::param("SIMEX needs D >= 2"));
        }
        if self.h_grid.is_empty() || self.h_grid.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::param("SIMEX h grid must be nonempty and positive"));
        }
        if self.h_grid.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::param("SIMEX h grid must be strictly increasing"));
        }
        if self.b_grid.is_empty() || self.b_grid.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::param("SIMEX b grid must be nonempty and positive"));
        }
        if !(0.0 <= self.trim.0 && self.trim.0 < self.trim.1 && self.trim.1 <= 1.0) {
            return Err(Error::param("trim quantiles must satisfy 0 <= lo < hi <= 1"));
        }
        Ok(())
    }
}

/// Everything SIMEX computed on the way to `h`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimexDiagnostics {
    pub h_pi: f64,
    /// Absolute bandwidth grid.
    pub h_grid: Vec<f64>,
    pub h_star_d: Vec<f64>,
    pub h_star_star_d: Vec<f64>,
    pub h_star: f64,
    pub h_star_star: f64,
    pub h_hat: f64,
    /// `h_star^2 / h_star_star`.
    pub linear_back: f64,
    /// Extrapolation bandwidth (absolute); `None` when degenerate.
    pub b: Option<f64>,
    /// All `h**_d` equal (or kernel weights underflowed): `h_hat = h_star`.
    pub degenerate: bool,
    pub cv_star_mean: Vec<f64>,
    pub cv_star_star_mean: Vec<f64>,
    /// Cross-validation points whose weight fit found no kernel mass.
    pub failed_fits: usize,
}

/// Cross-validation curves of one simulation branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchResult {
    pub cv_star: Vec<f64>,
    pub cv_star_star: Vec<f64>,
    pub failed_fits: usize,
}

#[derive(Debug, Clone)]
enum RegressionKernel {
    Deconv(FastDeconv),
    Gaussian(GaussianKernel),
}

impl SmoothingKernel for RegressionKernel {
    fn bandwidth(&self) -> f64 {
        match self {
            RegressionKernel::Deconv(k) => k.bandwidth(),
            RegressionKernel::Gaussian(k) => k.bandwidth(),
        }
    }

    #[inline]
    fn eval(&self, v: f64) -> f64 {
        match self {
            RegressionKernel::Deconv(k) => k.eval(v),
            RegressionKernel::Gaussian(k) => k.eval(v),
        }
    }

    #[inline]
    fn at(&self, t: f64, s: f64) -> f64 {
        match self {
            RegressionKernel::Deconv(k) => k.at(t, s),
            RegressionKernel::Gaussian(k) => k.at(t, s),
        }
    }
}

/// Precomputed inputs of one leave-one-out cross-validation level; noisy
/// treatments are sorted so kernel lookups sweep the table monotonically.
struct CvLevel<'a> {
    idx: &'a [usize],
    truth: &'a [f64],
    sorted_noisy: &'a [f64],
    pos: &'a [usize],
    pis: &'a [f64],
    py: &'a [f64],
    y: &'a [f64],
}

impl CvLevel<'_> {
    fn score<K: SmoothingKernel>(&self, kernel: &K) -> f64 {
        let n = self.sorted_noisy.len();
        let floor = EFFECTIVE_MASS_FLOOR * kernel.peak().abs();
        let mut total = 0.0;
        for (row, &i) in self.idx.iter().enumerate() {
            let pyr = &self.py[row * n..(row + 1) * n];
            let t = self.truth[i];
            let own = self.pos[i];
            let mut num = 0.0;
            let mut den = 0.0;
            for range in [0..own, own + 1..n] {
                for (&sj, &pj) in self.sorted_noisy[range.clone()].iter().zip(&pyr[range]) {
                    let l = kernel.at(t, sj);
                    num += pj * l;
                    den += l;
                }
            }
            if !(den > floor) {
                return f64::INFINITY;
            }
            let r = self.pis[row * n + i] * self.y[i] - num / den;
            total += r * r;
        }
        total
    }
}

/// A prepared SIMEX run. Branches are independent and may be evaluated in
/// any order or in parallel; [`SimexPlan::finish`] combines them.
#[derive(Debug, Clone)]
pub struct SimexPlan<'a> {
    sample: &'a ObservedSample,
    design: SieveDesign,
    criterion: crate::gel_weights::GelCriterion,
    config: SimexConfig,
    h_pi: f64,
    weight_kernel: FastDeconv,
    regression: Vec<RegressionKernel>,
}

impl<'a> SimexPlan<'a> {
    /// `variant` decides the regression kernel: deconvolution for
    /// [`EstimatorVariant::Weighted`], Gaussian for
    /// [`EstimatorVariant::Naive`].
    pub fn new(
        sample: &'a ObservedSample,
        h_pi: f64,
        k: usize,
        estimator: &EstimatorConfig,
        config: &SimexConfig,
        variant: EstimatorVariant,
    ) -> Result<Self> {
        config.validate()?;
        if !(h_pi > 0.0) {
            return Err(Error::param("h_PI must be positive"));
        }
        let design = SieveDesign::for_sample(sample, estimator, k)?;
        let (lo, hi) = sample
            .s()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let reach = (hi - lo) + 12.0 * math::sqrt(sample.error().variance());
        let weight_kernel = FastDeconv::new(sample.error(), estimator.kernel, h_pi, reach)?;
        let hs: Vec<f64> = config.h_grid.iter().map(|&c| c * h_pi).collect();
        let regression = match variant {
            EstimatorVariant::Naive => hs
                .iter()
                .map(|&h| RegressionKernel::Gaussian(GaussianKernel { h }))
                .collect(),
            _ => FastDeconv::family(sample.error(), estimator.kernel, &hs, reach)?
                .into_iter()
                .map(RegressionKernel::Deconv)
                .collect(),
        };
        Ok(Self {
            sample,
            design,
            criterion: estimator.criterion,
            config: config.clone(),
            h_pi,
            weight_kernel,
            regression,
        })
    }

    /// Distinct branches to compute: one when there is no measurement error
    /// (all branches coincide), `D` otherwise.
    pub fn branches(&self) -> usize {
        if self.sample.error().kind() == ErrorKind::None {
            1
        } else {
            self.config.d
        }
    }

    /// Simulates branch `d` and computes both cross-validation curves.
    pub fn run_branch(&self, d: usize) -> Result<BranchResult> {
        let mut rng = rng::stream(self.config.seed, &[SIMEX_STREAM, d as u64]);
        let err = self.sample.error();
        let s = self.sample.s();
        let s1: Vec<f64> = s.iter().map(|&v| v + err.sample(&mut rng)).collect();
        let s2: Vec<f64> = s1.iter().map(|&v| v + err.sample(&mut rng)).collect();
        let (cv_star, f1) = self.cv_level(s, &s1)?;
        let (cv_star_star, f2) = self.cv_level(&s1, &s2)?;
        Ok(BranchResult {
            cv_star,
            cv_star_star,
            failed_fits: f1 + f2,
        })
    }

    /// Cross-validation curve over the bandwidth grid, evaluating at the
    /// `truth` level with the `noisy` level as data.
    fn cv_level(&self, truth: &[f64], noisy: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = truth.len();
        let y = self.sample.y();
        let w = trim_indicator(truth, self.config.trim);
        let mut idx: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
        idx.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]).then(a.cmp(&b)));
        let mut pis = alloc::vec![0.0; idx.len() * n];
        let mut failed = 0;
        let mut init: Option<Vec<f64>> = None;
        for (row, &i) in idx.iter().enumerate() {
            let out = &mut pis[row * n..(row + 1) * n];
            match self
                .design
                .fit_weights(truth[i], noisy, &self.weight_kernel, self.criterion, init.as_deref())
            {
                Ok((fit, p, _)) => {
                    out.copy_from_slice(&p);
                    if fit.converged {
                        init = Some(fit.lambda);
                    }
                }
                Err(Error::AllWeightsZero { .. }) => {
                    out.iter_mut().for_each(|v| *v = 1.0);
                    failed += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| noisy[a].total_cmp(&noisy[b]).then(a.cmp(&b)));
        let sorted_noisy: Vec<f64> = order.iter().map(|&j| noisy[j]).collect();
        let mut py = alloc::vec![0.0; idx.len() * n];
        for row in 0..idx.len() {
            for (jj, &j) in order.iter().enumerate() {
                py[row * n + jj] = pis[row * n + j] * y[j];
            }
        }
        let mut pos = alloc::vec![0usize; n];
        for (jj, &j) in order.iter().enumerate() {
            pos[j] = jj;
        }
        let level = CvLevel {
            idx: &idx,
            truth,
            sorted_noisy: &sorted_noisy,
            pos: &pos,
            pis: &pis,
            py: &py,
            y,
        };
        let cv = self
            .regression
            .iter()
            .map(|kernel| match kernel {
                RegressionKernel::Deconv(FastDeconv::Table(k)) => level.score(k),
                RegressionKernel::Deconv(FastDeconv::Direct(k)) => level.score(k),
                RegressionKernel::Gaussian(k) => level.score(k),
            })
            .collect();
        Ok((cv, failed))
    }

    /// Combines branch results (in branch order) into `h`.
    pub fn finish(&self, mut results: Vec<BranchResult>) -> Result<(f64, SimexDiagnostics)> {
        if results.len() == 1 && self.branches() == 1 {
            let only = results.pop().expect("one result");
            results = alloc::vec![only; self.config.d];
        }
        if results.len() != self.config.d {
            return Err(Error::param("SIMEX result count differs from D"));
        }
        let h_grid: Vec<f64> = self.config.h_grid.iter().map(|c| c * self.h_pi).collect();
        let argmin = |cv: &[f64]| -> Result<f64> {
            let mut best = (f64::INFINITY, None);
            for (g, &v) in cv.iter().enumerate() {
                if v < best.0 {
                    best = (v, Some(g));
                }
            }
            best.1
                .map(|g| h_grid[g])
                .ok_or_else(|| Error::TuningFailed("cross-validation is undefined on the whole h grid".into()))
        };
        let h_star_d = results.iter().map(|r| argmin(&r.cv_star)).collect::<Result<Vec<_>>>()?;
        let h_star_star_d = results.iter().map(|r| argmin(&r.cv_star_star)).collect::<Result<Vec<_>>>()?;
        let dn = results.len() as f64;
        let mean_curve = |pick: fn(&BranchResult) -> &Vec<f64>| -> Vec<f64> {
            (0..h_grid.len())
                .map(|g| results.iter().map(|r| pick(r)[g]).sum::<f64>() / dn)
                .collect()
        };
        let cv_star_mean = mean_curve(|r| &r.cv_star);
        let cv_star_star_mean = mean_curve(|r| &r.cv_star_star);
        let h_star = argmin(&cv_star_mean)?;
        let h_star_star = argmin(&cv_star_star_mean)?;
        let failed_fits = results.iter().map(|r| r.failed_fits).sum();
        let (h_hat, b, degenerate) = local_constant_extrapolation(
            &h_star_d,
            &h_star_star_d,
            h_star,
            &self.config.b_grid.iter().map(|c| c * self.h_pi).collect::<Vec<_>>(),
        );
        let diag = SimexDiagnostics {
            h_pi: self.h_pi,
            h_grid,
            h_star_d,
            h_star_star_d,
            h_star,
            h_star_star,
            h_hat,
            linear_back: h_star * h_star / h_star_star,
            b,
            degenerate,
            cv_star_mean,
            cv_star_star_mean,
            failed_fits,
        };
        Ok((h_hat, diag))
    }
}

/// Local-constant (Nadaraya–Watson, Gaussian kernel) regression of `h*_d`
/// on `h**_d` evaluated at `h_star`, with `b` from leave-one-out CV over
/// `b_grid` (ties to the smaller `b`). Returns `(h, b, degenerate)`.
pub fn local_constant_extrapolation(
    h_star_d: &[f64],
    h_star_star_d: &[f64],
    h_star: f64,
    b_grid: &[f64],
) -> (f64, Option<f64>, bool) {
    let first = h_star_star_d[0];
    if h_star_star_d.iter().all(|&v| v == first) {
        return (h_star, None, true);
    }
    let nw = |x: f64, b: f64, skip: Option<usize>| -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (e, (&hs, &hss)) in h_star_d.iter().zip(h_star_star_d).enumerate() {
            if Some(e) == skip {
                continue;
            }
            let z = (x - hss) / b;
            let k = math::exp(-0.5 * z * z);
            num += hs * k;
            den += k;
        }
        (den > 0.0).then(|| num / den)
    };
    let mut best: Option<(f64, f64)> = None;
    for &b in b_grid {
        let mut loss = 0.0;
        for d in 0..h_star_d.len() {
            match nw(h_star_star_d[d], b, Some(d)) {
                Some(fit) => loss += (h_star_d[d] - fit) * (h_star_d[d] - fit),
                None => {
                    loss = f64::INFINITY;
                    break;
                }
            }
        }
        if loss.is_finite() && best.is_none_or(|(l, _)| loss < l) {
            best = Some((loss, b));
        }
    }
    let b = best.map_or_else(|| b_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max), |(_, b)| b);
    match nw(h_star, b, None) {
        Some(h) => (h, Some(b), false),
        None => (h_star, Some(b), true),
    }
}

/// SIMEX choice of `h` with `h0 = h_PI` and the given `K`, run sequentially.
pub fn simex_select_h(
    sample: &ObservedSample,
    h_pi: f64,
    k: usize,
    estimator: &EstimatorConfig,
    config: &SimexConfig,
) -> Result<(f64, SimexDiagnostics)> {
    simex_select_h_variant(sample, h_pi, k, estimator, config, EstimatorVariant::Weighted)
}

pub fn simex_select_h_variant(
    sample: &ObservedSample,
    h_pi: f64,
    k: usize,
    estimator: &EstimatorConfig,
    config: &SimexConfig,
    variant: EstimatorVariant,
) -> Result<(f64, SimexDiagnostics)> {
    let plan = SimexPlan::new(sample, h_pi, k, estimator, config, variant)?;
    let results = (0..plan.branches())
        .map(|d| plan.run_branch(d))
        .collect::<Result<Vec<_>>>()?;
    plan.finish(results)
}

/// All tuning settings.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TuningConfig {
    pub k_select: KSelectConfig,
    pub simex: SimexConfig,
}

/// `h0 = h_PI`, `K` by GCV, `h` by SIMEX.
pub fn two_step_tune(
    sample: &ObservedSample,
    estimator: &EstimatorConfig,
    config: &TuningConfig,
) -> Result<SmoothingParams> {
    two_step_tune_variant(sample, estimator, config, EstimatorVariant::Weighted)
}

pub fn two_step_tune_variant(
    sample: &ObservedSample,
    estimator: &EstimatorConfig,
    config: &TuningConfig,
    variant: EstimatorVariant,
) -> Result<SmoothingParams> {
    let (h_pi, sel) = first_step(sample, estimator, config)?;
    let (h, simex) = simex_select_h_variant(sample, h_pi, sel.k, estimator, &config.simex, variant)?;
    Ok(assemble(h_pi, sel, h, simex))
}

/// Plug-in bandwidth and GCV choice of `K`.
pub fn first_step(
    sample: &ObservedSample,
    estimator: &EstimatorConfig,
    config: &TuningConfig,
) -> Result<(f64, KSelection)> {
    config.simex.validate()?;
    let h_pi = plug_in_bandwidth_with(sample.s(), sample.error(), estimator.kernel, PLUG_IN_GRID_N)?;
    let sel = select_k(sample, h_pi, estimator, &config.k_select)?;
    Ok((h_pi, sel))
}

/// Packs the two steps into [`SmoothingParams`].
pub fn assemble(h_pi: f64, sel: KSelection, h: f64, simex: SimexDiagnostics) -> SmoothingParams {
    SmoothingParams {
        k: sel.k,
        h0: h_pi,
        h,
        provenance: Provenance::TwoStep(Box::new(TwoStepRecord {
            h_pi,
            c_tilde: sel.c_tilde,
            gcv: sel.gcv,
            simex,
        })),
    }
}

/// Weights for the CV sum: 1 inside the trimmed quantile range of `values`,
/// 0 outside.
pub fn trim_indicator(values: &[f64], trim: (f64, f64)) -> Vec<f64> {
    let sorted = math::sorted_copy(values);
    let lo = math::quantile_sorted(&sorted, trim.0);
    let hi = math::quantile_sorted(&sorted, trim.1);
    values
        .iter()
        .map(|&v| if v >= lo && v <= hi { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_rule_and_cap() {
        // tiny h_PI blows up the formula, cap at N/10
        assert_eq!(k_from_c(1.0, 0.01, 100, 10, BasisFamily::PowerSeries, 3, 1), 10);
        assert_eq!(k_from_c(0.01, 0.5, 500, 10, BasisFamily::PowerSeries, 3, 1), 2);
        assert_eq!(k_from_c(0.01, 0.5, 500, 10, BasisFamily::BSpline, 3, 1), 4);
        // power series in one variable tops out at degree 20
        assert_eq!(k_from_c(10.0, 0.01, 10_000, 10, BasisFamily::PowerSeries, 3, 1), 21);
    }

    #[test]
    fn extrapolation_is_convex_combination() {
        let hs = [0.3, 0.35, 0.4, 0.32];
        let hss = [0.4, 0.45, 0.5, 0.41];
        let (h, b, deg) = local_constant_extrapolation(&hs, &hss, 0.34, &math::log_space(0.01, 1.0, 20));
        assert!(!deg && b.is_some());
        assert!((0.3..=0.4).contains(&h));
        let (h, b, deg) = local_constant_extrapolation(&hs, &[0.4; 4], 0.34, &[0.1]);
        assert!(deg && b.is_none());
        assert_eq!(h, 0.34);
    }

    #[test]
    fn simex_needs_two_branches() {
        let cfg = SimexConfig {
            d: 1,
            ..SimexConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn plug_in_guard() {
        let s: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, v) = math::mean_var(&s);
        let e = ErrorModel::laplace(v).unwrap();
        assert!(matches!(plug_in_bandwidth(&s, &e), Err(Error::NoiseExceedsSignal { .. })));
    }
}
