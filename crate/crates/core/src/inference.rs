//! Pointwise confidence intervals from empirical influence values.
//!
//! With `L_{U,b}(v) = L_U(v/b)/b`, the influence value of observation `i` at
//! `t` is
//!
//! ```text
//! eta_i = [pi_i Y_i L_{U,h}(t - S_i)]~ - mu [L_{U,h}(t - S_i)]~
//!       + mu [L_{U,h0}(t - S_i)]~ - [m_i pi_i L_{U,h0}(t - S_i)]~
//! ```
//!
//! where `[.]~` subtracts the sample mean. The variance of `mu(t)` is
//! estimated by `sum_i (eta_i - mean)^2 / (N f_T(t))^2` at undersmoothed
//! bandwidths `h N^(-1/10)`, `h0 N^(-1/10)`.

use alloc::vec::Vec;

use crate::deconv_kernel::{FastDeconv, KernelSpec, SmoothingKernel, EFFECTIVE_MASS_FLOOR};
use crate::error::{Error, Result};
use crate::estimator::{m_hat_with_design, span, EstimatorConfig, ObservedSample, SieveDesign};
use crate::math;
use crate::tuning::SmoothingParams;

pub const UNDERSMOOTH_EXPONENT: f64 = -0.1;
pub const DENSITY_FLOOR: f64 = 1e-10;
pub const ALPHA_RANGE: (f64, f64) = (0.005, 0.5);

/// Estimated quantities at one `t`, evaluated at every sample point.
#[derive(Debug, Clone, Copy)]
pub struct PlugIns<'a> {
    /// `pi(t, X_i)`.
    pub pi: &'a [f64],
    /// `mu(t)`.
    pub mu: f64,
    /// `m(t, X_i)`.
    pub m: &'a [f64],
}

/// Centered influence values at `t` with untruncated kernels at `h`, `h0`.
pub fn influence_values(
    sample: &ObservedSample,
    params: &SmoothingParams,
    kernel: KernelSpec,
    t: f64,
    plug: &PlugIns<'_>,
) -> Result<Vec<f64>> {
    params.validate()?;
    let sp = span(sample.s(), &[t]);
    let kh = FastDeconv::new(sample.error(), kernel, params.h, sp)?;
    let kh0 = FastDeconv::new(sample.error(), kernel, params.h0, sp)?;
    influence_with(sample, &kh, &kh0, t, plug)
}

pub(crate) fn influence_with<K: SmoothingKernel + ?Sized, K0: SmoothingKernel + ?Sized>(
    sample: &ObservedSample,
    kh: &K,
    kh0: &K0,
    t: f64,
    plug: &PlugIns<'_>,
) -> Result<Vec<f64>> {
    let n = sample.len();
    if plug.pi.len() != n || plug.m.len() != n {
        return Err(Error::param("plug-in vectors must have one entry per observation"));
    }
    let (h, h0) = (kh.bandwidth(), kh0.bandwidth());
    let mut a = Vec::with_capacity(n);
    let mut lh = Vec::with_capacity(n);
    let mut lh0 = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let s = sample.s()[i];
        let l = kh.at(t, s) / h;
        let l0 = kh0.at(t, s) / h0;
        a.push(plug.pi[i] * sample.y()[i] * l);
        lh.push(l);
        lh0.push(l0);
        c.push(plug.m[i] * plug.pi[i] * l0);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (ma, ml, ml0, mc) = (mean(&a), mean(&lh), mean(&lh0), mean(&c));
    Ok((0..n)
        .map(|i| (a[i] - ma) - plug.mu * (lh[i] - ml) + plug.mu * (lh0[i] - ml0) - (c[i] - mc))
        .collect())
}

/// Pointwise `1 - alpha` band.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CiBand {
    pub grid: Vec<f64>,
    /// Undersmoothed estimate; `NaN` at skipped points.
    pub mu: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub variance: Vec<f64>,
    pub density: Vec<f64>,
    pub alpha: f64,
    pub z: f64,
    pub undersmooth_factor: f64,
    pub skipped: Vec<usize>,
    /// Non-skipped points with zero estimated variance.
    pub degenerate: Vec<usize>,
    /// The undersmoothed parameters actually used.
    pub params: SmoothingParams,
}

/// `N^(-1/10)`.
pub fn undersmooth_factor(n: usize) -> f64 {
    math::powf(n as f64, UNDERSMOOTH_EXPONENT)
}

/// Undersmoothed estimate and normal-approximation band on `grid`.
pub fn ci_pointwise(
    sample: &ObservedSample,
    params: &SmoothingParams,
    config: &EstimatorConfig,
    grid: &[f64],
    alpha: f64,
) -> Result<CiBand> {
    if !(alpha >= ALPHA_RANGE.0 && alpha <= ALPHA_RANGE.1) {
        return Err(Error::param("alpha must lie in [0.005, 0.5]"));
    }
    params.validate()?;
    let n = sample.len();
    let factor = undersmooth_factor(n);
    let us = params.scaled(factor);
    let design = SieveDesign::for_sample(sample, config, us.k)?;
    let sp = span(sample.s(), grid);
    let wk = FastDeconv::new(sample.error(), config.kernel, us.h0, sp)?;
    let rk = FastDeconv::new(sample.error(), config.kernel, us.h, sp)?;
    let z = math::norm_quantile(1.0 - alpha / 2.0);
    let s = sample.s();
    let (smin, smax) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let floor = EFFECTIVE_MASS_FLOOR * rk.peak().abs();

    let g = grid.len();
    let mut band = CiBand {
        grid: grid.to_vec(),
        mu: alloc::vec![f64::NAN; g],
        lo: alloc::vec![f64::NAN; g],
        hi: alloc::vec![f64::NAN; g],
        variance: alloc::vec![f64::NAN; g],
        density: alloc::vec![f64::NAN; g],
        alpha,
        z,
        undersmooth_factor: factor,
        skipped: Vec::new(),
        degenerate: Vec::new(),
        params: us.clone(),
    };
    let mut init: Option<Vec<f64>> = None;
    for (gi, &t) in grid.iter().enumerate() {
        if t < smin - us.h || t > smax + us.h {
            band.skipped.push(gi);
            continue;
        }
        let (fit, pis, _) = match design.fit_weights(t, s, &wk, config.criterion, init.as_deref()) {
            Ok(v) => v,
            Err(Error::AllWeightsZero { .. }) => {
                band.skipped.push(gi);
                continue;
            }
            Err(e) => return Err(e),
        };
        if fit.converged {
            init = Some(fit.lambda.clone());
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let l = rk.at(t, s[i]);
            num += pis[i] * sample.y()[i] * l;
            den += l;
        }
        if !(den > floor) {
            band.skipped.push(gi);
            continue;
        }
        let mu = num / den;
        let m = m_hat_with_design(sample, design.clone(), &wk, t)?.fitted();
        let eta = influence_with(
            sample,
            &rk,
            &wk,
            t,
            &PlugIns {
                pi: &pis,
                mu,
                m: &m,
            },
        )?;
        let f = den / (n as f64 * us.h);
        let v = variance_from_influence(&eta, f);
        let half = z * math::sqrt(v);
        band.mu[gi] = mu;
        band.lo[gi] = mu - half;
        band.hi[gi] = mu + half;
        band.variance[gi] = v;
        band.density[gi] = f;
        if v == 0.0 {
            band.degenerate.push(gi);
        }
    }
    Ok(band)
}

/// `sum_i (eta_i - mean)^2 / (N max(f, 1e-10))^2`.
pub fn variance_from_influence(eta: &[f64], f: f64) -> f64 {
    let n = eta.len() as f64;
    let mean = eta.iter().sum::<f64>() / n;
    let ss: f64 = eta.iter().map(|e| (e - mean) * (e - mean)).sum();
    let d = n * f.max(DENSITY_FLOOR);
    ss / (d * d)
}
