//! Weighted local-constant deconvolution estimator of the dose-response curve.
//!
//! ```text
//! mu(t) = sum_i pi(t, X_i) Y_i L_U((t - S_i)/h) / sum_i L_U((t - S_i)/h)
//! ```
//!
//! The weights `pi` come from the local GEL fit with the truncated kernel at
//! bandwidth `h0`; the regression kernel at bandwidth `h` is not truncated.

use alloc::vec::Vec;

use crate::deconv_kernel::{
    kernel_weights, ErrorModel, FastDeconv, GaussianKernel, KernelSpec, SmoothingKernel, EFFECTIVE_MASS_FLOOR,
};
use crate::error::{Error, Result};
use crate::gel_weights::{GelCriterion, GelProblem, WeightFit};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::sieve_basis::{evaluate_basis, fit_scaler, BasisFamily, BasisSpec, CovariateScaler, DEFAULT_SPLINE_DEGREE};
use crate::tuning::SmoothingParams;

/// Ridge for the outcome-regression normal equations, used (and escalated)
/// only when they are numerically singular.
pub const OUTCOME_RIDGE: f64 = 1e-8;
pub const DEFAULT_GRID_N: usize = 201;
pub const DEFAULT_TRIM: (f64, f64) = (0.05, 0.95);

/// The observed data `(S, X, Y)` and the law of the measurement error.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    s: Vec<f64>,
    x: Matrix,
    y: Vec<f64>,
    error: ErrorModel,
}

impl ObservedSample {
    pub fn new(s: Vec<f64>, x: Matrix, y: Vec<f64>, error: ErrorModel) -> Result<Self> {
        let n = s.len();
        if n < 2 {
            return Err(Error::InvalidSample("need at least two observations".into()));
        }
        if x.rows() != n || y.len() != n {
            return Err(Error::InvalidSample(alloc::format!(
                "length mismatch: s has {n}, x has {} rows, y has {}",
                x.rows(),
                y.len()
            )));
        }
        if x.cols() == 0 {
            return Err(Error::InvalidSample("need at least one covariate".into()));
        }
        if s.iter().chain(&y).chain(x.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("non-finite entry".into()));
        }
        Ok(Self { s, x, y, error })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn error(&self) -> &ErrorModel {
        &self.error
    }

    /// Same covariates and outcomes, different treatment measurements.
    pub fn with_s(&self, s: Vec<f64>) -> Result<Self> {
        Self::new(s, self.x.clone(), self.y.clone(), self.error.clone())
    }

    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.s.clone(), self.x.clone(), y, self.error.clone())
    }

    pub fn with_error(&self, error: ErrorModel) -> Self {
        Self {
            error,
            ..self.clone()
        }
    }

    /// The sample with the measurement error ignored (`S` treated as `T`).
    pub fn without_error(&self) -> Self {
        self.with_error(ErrorModel::none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum EstimatorVariant {
    /// Estimated GEL weights, deconvolution kernels.
    Weighted,
    /// Known weights `pi0`.
    Oracle,
    /// Measurement error ignored; Gaussian regression kernel.
    Naive,
}

/// Choices that are not smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorConfig {
    pub criterion: GelCriterion,
    pub basis_family: BasisFamily,
    pub spline_degree: usize,
    pub kernel: KernelSpec,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            criterion: GelCriterion::ExponentialTilting,
            basis_family: BasisFamily::PowerSeries,
            spline_degree: DEFAULT_SPLINE_DEGREE,
            kernel: KernelSpec::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn basis_spec(&self, k: usize, covariate_dim: usize) -> Result<BasisSpec> {
        BasisSpec::with_degree(self.basis_family, k, self.spline_degree, covariate_dim)
    }
}

/// An estimated curve on a grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdrfCurve {
    pub variant: EstimatorVariant,
    pub grid: Vec<f64>,
    /// `NaN` at skipped points.
    pub mu: Vec<f64>,
    /// `sum_i pi_i L_i / sum_i L_i`, the weight mass under the regression kernel.
    pub weight_ratio: Vec<f64>,
    pub skipped: Vec<usize>,
    /// Weight-fit convergence per grid point (`false` when skipped).
    pub fit_flags: Vec<bool>,
    /// CUE weights clipped at zero, summed over the grid.
    pub clipped_weights: usize,
    pub params: SmoothingParams,
}

impl AdrfCurve {
    pub fn is_skipped(&self, g: usize) -> bool {
        self.skipped.binary_search(&g).is_ok()
    }

    pub fn all_converged(&self) -> bool {
        self.fit_flags
            .iter()
            .enumerate()
            .all(|(g, f)| *f || self.is_skipped(g))
    }
}

/// Scaled covariates, the basis matrix and its column means.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveDesign {
    pub spec: BasisSpec,
    pub scaler: CovariateScaler,
    pub basis: Matrix,
    pub ubar: Vec<f64>,
}

impl SieveDesign {
    pub fn new(x: &Matrix, spec: BasisSpec) -> Result<Self> {
        let scaler = fit_scaler(x)?;
        let basis = evaluate_basis(&spec, &scaler, x)?;
        let ubar = basis.col_means();
        Ok(Self {
            spec,
            scaler,
            basis,
            ubar,
        })
    }

    pub fn for_sample(sample: &ObservedSample, config: &EstimatorConfig, k: usize) -> Result<Self> {
        Self::new(sample.x(), config.basis_spec(k, sample.x().cols())?)
    }

    /// Basis row for a new covariate vector.
    pub fn row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_row_major(1, x.len(), x.to_vec());
        Ok(evaluate_basis(&self.spec, &self.scaler, &m)?.row(0).to_vec())
    }

    /// Fits the GEL weights at `t` for treatment measurements `s` and
    /// returns the fit with `pi(t, X_j)` for every row.
    pub fn fit_weights<K: SmoothingKernel + ?Sized>(
        &self,
        t: f64,
        s: &[f64],
        kernel: &K,
        criterion: GelCriterion,
        init: Option<&[f64]>,
    ) -> Result<(WeightFit, Vec<f64>, usize)> {
        let w = kernel_weights(kernel, t, s, true)?;
        let fit = GelProblem::new(t, &self.basis, &w, &self.ubar)?.solve(criterion, init);
        let (pis, clipped) = crate::gel_weights::pi_values(&fit, criterion, &self.basis);
        Ok((fit, pis, clipped))
    }
}

/// Largest `|t - s|` between the grid and the sample.
pub fn span(s: &[f64], grid: &[f64]) -> f64 {
    let lo = s.iter().chain(grid).copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().chain(grid).copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// `n` equispaced points over the `(lo, hi)` quantile range of `s`.
pub fn default_grid(s: &[f64], n: usize, trim: (f64, f64)) -> Vec<f64> {
    let sorted = math::sorted_copy(s);
    math::lin_space(
        math::quantile_sorted(&sorted, trim.0),
        math::quantile_sorted(&sorted, trim.1),
        n,
    )
}

enum Weights<'a> {
    Fitted {
        design: &'a SieveDesign,
        kernel: &'a FastDeconv,
        criterion: GelCriterion,
    },
    Known(&'a dyn Fn(f64, &[f64]) -> f64),
    Precomputed(&'a [Option<(Vec<f64>, bool)>]),
}

#[allow(clippy::too_many_arguments)]
fn curve<R: SmoothingKernel + ?Sized>(
    sample: &ObservedSample,
    weights: Weights<'_>,
    regression: &R,
    grid: &[f64],
    params: SmoothingParams,
    variant: EstimatorVariant,
) -> Result<AdrfCurve> {
    let s = sample.s();
    let y = sample.y();
    let n = s.len();
    let (smin, smax) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let h = regression.bandwidth();
    let peak = regression.peak().abs();
    let mut mu = Vec::with_capacity(grid.len());
    let mut ratio = Vec::with_capacity(grid.len());
    let mut flags = Vec::with_capacity(grid.len());
    let mut skipped = Vec::new();
    let mut clipped_total = 0;
    let mut init: Option<Vec<f64>> = None;
    let mut pis = alloc::vec![0.0; n];
    for (g, &t) in grid.iter().enumerate() {
        let mut skip = |mu: &mut Vec<f64>, ratio: &mut Vec<f64>, flags: &mut Vec<bool>| {
            skipped.push(g);
            mu.push(f64::NAN);
            ratio.push(f64::NAN);
            flags.push(false);
        };
        if t < smin - h || t > smax + h {
            skip(&mut mu, &mut ratio, &mut flags);
            continue;
        }
        let converged = match &weights {
            Weights::Fitted {
                design,
                kernel,
                criterion,
            } => match design.fit_weights(t, s, *kernel, *criterion, init.as_deref()) {
                Ok((fit, p, clipped)) => {
                    clipped_total += clipped;
                    pis = p;
                    if fit.converged {
                        init = Some(fit.lambda);
                        true
                    } else {
                        false
                    }
                }
                Err(Error::AllWeightsZero { .. }) => {
                    skip(&mut mu, &mut ratio, &mut flags);
                    continue;
                }
                Err(e) => return Err(e),
            },
            Weights::Known(pi0) => {
                for (i, p) in pis.iter_mut().enumerate() {
                    *p = pi0(t, sample.x().row(i));
                }
                true
            }
            Weights::Precomputed(all) => match &all[g] {
                Some((p, converged)) => {
                    pis.copy_from_slice(p);
                    *converged
                }
                None => {
                    skip(&mut mu, &mut ratio, &mut flags);
                    continue;
                }
            },
        };
        let mut num = 0.0;
        let mut pm = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let l = regression.at(t, s[i]);
            num += pis[i] * y[i] * l;
            pm += pis[i] * l;
            den += l;
        }
        if !(den > EFFECTIVE_MASS_FLOOR * peak) {
            skip(&mut mu, &mut ratio, &mut flags);
            continue;
        }
        mu.push(num / den);
        ratio.push(pm / den);
        flags.push(converged);
    }
    Ok(AdrfCurve {
        variant,
        grid: grid.to_vec(),
        mu,
        weight_ratio: ratio,
        skipped,
        fit_flags: flags,
        clipped_weights: clipped_total,
        params,
    })
}

/// GEL weights `pi(t, X_i)` and convergence flags at every grid point;
/// `None` where the truncated kernel carries no mass.
pub fn fit_grid_weights<K: SmoothingKernel + ?Sized>(
    sample: &ObservedSample,
    design: &SieveDesign,
    kernel: &K,
    criterion: GelCriterion,
    grid: &[f64],
) -> Result<Vec<Option<(Vec<f64>, bool)>>> {
    let mut init: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        match design.fit_weights(t, sample.s(), kernel, criterion, init.as_deref()) {
            Ok((fit, pis, _)) => {
                let converged = fit.converged;
                if converged {
                    init = Some(fit.lambda);
                }
                out.push(Some((pis, converged)));
            }
            Err(Error::AllWeightsZero { .. }) => out.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// The local-constant regression step with weights from
/// [`fit_grid_weights`], for any regression kernel.
pub fn curve_from_weights<R: SmoothingKernel + ?Sized>(
    sample: &ObservedSample,
    weights: &[Option<(Vec<f64>, bool)>],
    regression: &R,
    grid: &[f64],
    params: SmoothingParams,
    variant: EstimatorVariant,
) -> Result<AdrfCurve> {
    if weights.len() != grid.len() {
        return Err(Error::param("one weight vector per grid point is required"));
    }
    curve(sample, Weights::Precomputed(weights), regression, grid, params, variant)
}

/// The weighted deconvolution estimator on `grid`.
///
/// Grid points outside `[min S - h, max S + h]`, or where the truncated
/// weight kernel carries no mass, are skipped.
pub fn mu_hat(
    sample: &ObservedSample,
    params: &SmoothingParams,
    config: &EstimatorConfig,
    grid: &[f64],
) -> Result<AdrfCurve> {
    params.validate()?;
    let design = SieveDesign::for_sample(sample, config, params.k)?;
    mu_hat_with_design(sample, &design, params, config, grid)
}

/// [`mu_hat`] with a prebuilt basis.
pub fn mu_hat_with_design(
    sample: &ObservedSample,
    design: &SieveDesign,
    params: &SmoothingParams,
    config: &EstimatorConfig,
    grid: &[f64],
) -> Result<AdrfCurve> {
    let sp = span(sample.s(), grid);
    let wk = FastDeconv::new(sample.error(), config.kernel, params.h0, sp)?;
    let rk = FastDeconv::new(sample.error(), config.kernel, params.h, sp)?;
    curve(
        sample,
        Weights::Fitted {
            design,
            kernel: &wk,
            criterion: config.criterion,
        },
        &rk,
        grid,
        params.clone(),
        EstimatorVariant::Weighted,
    )
}

/// The estimator with known weights `pi0(t, x)`.
pub fn mu_oracle(
    sample: &ObservedSample,
    pi0: &dyn Fn(f64, &[f64]) -> f64,
    h: f64,
    kernel: KernelSpec,
    grid: &[f64],
) -> Result<AdrfCurve> {
    let params = SmoothingParams::manual(1, h, h)?;
    let rk = FastDeconv::new(sample.error(), kernel, h, span(sample.s(), grid))?;
    curve(
        sample,
        Weights::Known(pi0),
        &rk,
        grid,
        params,
        EstimatorVariant::Oracle,
    )
}

/// The naive estimator with given smoothing parameters: weights fitted with
/// the plain kernel at `h0` as if `S` were `T`, Gaussian regression kernel
/// at `h`.
pub fn naive_mu_with_params(
    sample: &ObservedSample,
    params: &SmoothingParams,
    config: &EstimatorConfig,
    grid: &[f64],
) -> Result<AdrfCurve> {
    params.validate()?;
    let plain = sample.without_error();
    let design = SieveDesign::for_sample(&plain, config, params.k)?;
    let wk = FastDeconv::new(plain.error(), config.kernel, params.h0, span(plain.s(), grid))?;
    curve(
        &plain,
        Weights::Fitted {
            design: &design,
            kernel: &wk,
            criterion: config.criterion,
        },
        &GaussianKernel { h: params.h },
        grid,
        params.clone(),
        EstimatorVariant::Naive,
    )
}

/// The naive estimator with its own two-step tuning on the error-free view
/// of the sample.
pub fn naive_mu(
    sample: &ObservedSample,
    config: &EstimatorConfig,
    tuning: &crate::tuning::TuningConfig,
    grid: &[f64],
) -> Result<AdrfCurve> {
    let plain = sample.without_error();
    let params = crate::tuning::two_step_tune_variant(&plain, config, tuning, EstimatorVariant::Naive)?;
    naive_mu_with_params(&plain, &params, config, grid)
}

/// `m(t, x) = gamma_t' u_K(x)`, fitted by kernel-weighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRegression {
    pub t: f64,
    pub gamma: Vec<f64>,
    design: SieveDesign,
}

impl OutcomeRegression {
    /// `m(t, x)` at a raw covariate vector.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_row(&self.design.row(x)?))
    }

    /// `m(t, x)` at a basis row.
    pub fn eval_row(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.gamma).map(|(a, b)| a * b).sum()
    }

    /// `m(t, X_i)` at every sample point.
    pub fn fitted(&self) -> Vec<f64> {
        self.design.basis.iter_rows().map(|u| self.eval_row(u)).collect()
    }
}

/// Outcome regression at `t` with the truncated `h0` deconvolution kernel.
pub fn m_hat(
    sample: &ObservedSample,
    params: &SmoothingParams,
    config: &EstimatorConfig,
    t: f64,
) -> Result<OutcomeRegression> {
    params.validate()?;
    let design = SieveDesign::for_sample(sample, config, params.k)?;
    let wk = FastDeconv::new(sample.error(), config.kernel, params.h0, span(sample.s(), &[t]))?;
    m_hat_with_design(sample, design, &wk, t)
}

pub(crate) fn m_hat_with_design<K: SmoothingKernel + ?Sized>(
    sample: &ObservedSample,
    design: SieveDesign,
    kernel: &K,
    t: f64,
) -> Result<OutcomeRegression> {
    let w = kernel_weights(kernel, t, sample.s(), true)?;
    let total: f64 = w.iter().sum();
    let k = design.basis.cols();
    let mut a = alloc::vec![0.0; k * k];
    let mut b = alloc::vec![0.0; k];
    for (i, u) in design.basis.iter_rows().enumerate() {
        let wi = w[i] / total;
        if wi == 0.0 {
            continue;
        }
        for p in 0..k {
            b[p] += wi * u[p] * sample.y()[i];
            for q in 0..=p {
                a[p * k + q] += wi * u[p] * u[q];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            a[q * k + p] = a[p * k + q];
        }
    }
    let (gamma, _) = linalg::solve_spd_regularized(&a, k, &b, OUTCOME_RIDGE)
        .ok_or_else(|| Error::param("outcome regression normal equations are singular"))?;
    Ok(OutcomeRegression { t, gamma, design })
}

/// Deconvolution kernel density estimate `(N h)^-1 sum_i L_U((t - S_i)/h)`.
pub fn f_t_hat(sample: &ObservedSample, h: f64, kernel: KernelSpec, grid: &[f64]) -> Result<Vec<f64>> {
    let lu = FastDeconv::new(sample.error(), kernel, h, span(sample.s(), grid))?;
    Ok(density_on(&lu, sample.s(), grid))
}

pub(crate) fn density_on<K: SmoothingKernel + ?Sized>(kernel: &K, s: &[f64], grid: &[f64]) -> Vec<f64> {
    let nh = s.len() as f64 * kernel.bandwidth();
    grid.iter()
        .map(|&t| s.iter().map(|&si| kernel.at(t, si)).sum::<f64>() / nh)
        .collect()
}
