//! Local generalized empirical likelihood weights.
//!
//! For a fixed treatment value `t` the dual objective is
//!
//! ```text
//! G(lambda) = sum_i rho(lambda' u_i) w_i - lambda' ubar
//! ```
//!
//! with `w_i` the truncated, normalized deconvolution kernel weights at `t`
//! and `ubar` the plain sample mean of the basis rows. The fitted weight
//! function is `pi(t, x) = rho'(lambda' u_K(x))`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;

pub const ARMIJO: f64 = 1e-4;
pub const SHRINK: f64 = 0.5;
pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;
pub const HESSIAN_RIDGE: f64 = 1e-10;
/// Iterates beyond this norm mean the dual is unbounded above (the moment
/// system has no solution with admissible weights).
pub const DIVERGENCE_NORM: f64 = 1e6;
const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum GelCriterion {
    ExponentialTilting,
    EmpiricalLikelihood,
    ContinuousUpdating,
    InverseLogistic,
}

impl GelCriterion {
    pub const ALL: [GelCriterion; 4] = [
        GelCriterion::ExponentialTilting,
        GelCriterion::EmpiricalLikelihood,
        GelCriterion::ContinuousUpdating,
        GelCriterion::InverseLogistic,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            GelCriterion::ExponentialTilting => "et",
            GelCriterion::EmpiricalLikelihood => "el",
            GelCriterion::ContinuousUpdating => "cue",
            GelCriterion::InverseLogistic => "ilog",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.short_name() == name)
    }

    #[inline]
    pub fn rho(self, v: f64) -> f64 {
        match self {
            GelCriterion::ExponentialTilting => -math::exp(-v - 1.0),
            GelCriterion::EmpiricalLikelihood => math::ln_1p(v),
            GelCriterion::ContinuousUpdating => -0.5 * (1.0 - v) * (1.0 - v),
            GelCriterion::InverseLogistic => v - math::exp(-v),
        }
    }

    #[inline]
    pub fn rho1(self, v: f64) -> f64 {
        match self {
            GelCriterion::ExponentialTilting => math::exp(-v - 1.0),
            GelCriterion::EmpiricalLikelihood => 1.0 / (1.0 + v),
            GelCriterion::ContinuousUpdating => 1.0 - v,
            GelCriterion::InverseLogistic => 1.0 + math::exp(-v),
        }
    }

    #[inline]
    pub fn rho2(self, v: f64) -> f64 {
        match self {
            GelCriterion::ExponentialTilting => -math::exp(-v - 1.0),
            GelCriterion::EmpiricalLikelihood => -1.0 / ((1.0 + v) * (1.0 + v)),
            GelCriterion::ContinuousUpdating => -1.0,
            GelCriterion::InverseLogistic => -math::exp(-v),
        }
    }

    /// `(rho, rho', rho'')` at `v`, sharing the transcendental evaluation.
    #[inline]
    pub fn derivatives(self, v: f64) -> (f64, f64, f64) {
        match self {
            GelCriterion::ExponentialTilting => {
                let e = math::exp(-v - 1.0);
                (-e, e, -e)
            }
            GelCriterion::EmpiricalLikelihood => {
                let r = 1.0 / (1.0 + v);
                (math::ln_1p(v), r, -r * r)
            }
            GelCriterion::ContinuousUpdating => (-0.5 * (1.0 - v) * (1.0 - v), 1.0 - v, -1.0),
            GelCriterion::InverseLogistic => {
                let e = math::exp(-v);
                (v - e, 1.0 + e, -e)
            }
        }
    }

    /// `rho(v + d) - rho(v)`, accurate to relative precision for small `d`.
    #[inline]
    pub fn rho_increment(self, v: f64, d: f64) -> f64 {
        match self {
            GelCriterion::ExponentialTilting => -math::exp(-v - 1.0) * math::expm1(-d),
            GelCriterion::EmpiricalLikelihood => math::ln_1p(d / (1.0 + v)),
            GelCriterion::ContinuousUpdating => (1.0 - v) * d - 0.5 * d * d,
            GelCriterion::InverseLogistic => d - math::exp(-v) * math::expm1(-d),
        }
    }

    /// Whether `v` is an admissible argument for an observation with
    /// positive weight.
    #[inline]
    pub fn in_domain(self, v: f64) -> bool {
        match self {
            GelCriterion::EmpiricalLikelihood => v > -1.0,
            GelCriterion::ContinuousUpdating => v < 1.0,
            _ => v.is_finite(),
        }
    }

    /// Constant-coordinate starting value: `(rho')^{-1}(1)` where it exists.
    /// The inverse logistic has `rho' > 1` everywhere and starts at 0.
    pub fn unit_weight_argument(self) -> f64 {
        match self {
            GelCriterion::ExponentialTilting => -1.0,
            _ => 0.0,
        }
    }
}

/// Outcome of maximizing the dual objective at one `t`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightFit {
    pub t: f64,
    pub lambda: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    /// Sum of truncated kernel weights over `N`.
    pub effective_kernel_mass: f64,
    /// Objective at the start, then after each accepted step (start value
    /// plus the accumulated increments, each evaluated in difference form).
    #[cfg_attr(feature = "serde", serde(skip))]
    pub history: Vec<f64>,
}

impl WeightFit {
    /// `pi(t, x) = rho'(lambda' u)`; CUE weights are clipped at zero.
    pub fn pi(&self, criterion: GelCriterion, row: &[f64]) -> f64 {
        pi_hat(self, criterion, row)
    }
}

/// Value, gradient and Hessian of the dual objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `K x K`.
    pub hessian: Vec<f64>,
}

/// The data of one local dual problem.
#[derive(Debug, Clone)]
pub struct GelProblem<'a> {
    basis: &'a Matrix,
    ubar: &'a [f64],
    active: Vec<(usize, f64)>,
    mass: f64,
    t: f64,
}

impl<'a> GelProblem<'a> {
    /// `kernel_w` must already be truncated (nonnegative).
    pub fn new(t: f64, basis: &'a Matrix, kernel_w: &[f64], ubar: &'a [f64]) -> Result<Self> {
        if kernel_w.len() != basis.rows() || ubar.len() != basis.cols() {
            return Err(Error::param("kernel weights, basis and basis mean disagree in size"));
        }
        if kernel_w.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::param("kernel weights must be truncated to be nonnegative"));
        }
        let total: f64 = kernel_w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::AllWeightsZero { t });
        }
        let active = kernel_w
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (i, w / total))
            .collect();
        Ok(Self {
            basis,
            ubar,
            active,
            mass: total / basis.rows() as f64,
            t,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    #[inline]
    fn argument(&self, i: usize, lambda: &[f64]) -> f64 {
        self.basis.row(i).iter().zip(lambda).map(|(u, l)| u * l).sum()
    }

    /// Objective value only.
    pub fn value(&self, criterion: GelCriterion, lambda: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for &(i, w) in &self.active {
            let v = self.argument(i, lambda);
            if !criterion.in_domain(v) {
                return Err(Error::DomainViolation { index: i, value: v });
            }
            acc += criterion.rho(v) * w;
        }
        let lin: f64 = lambda.iter().zip(self.ubar).map(|(l, u)| l * u).sum();
        let value = acc - lin;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::DomainViolation {
                index: self.active.first().map_or(0, |a| a.0),
                value,
            })
        }
    }

    pub fn evaluate(&self, criterion: GelCriterion, lambda: &[f64]) -> Result<ObjectiveEval> {
        let k = self.dim();
        let mut acc = 0.0;
        let mut gradient: Vec<f64> = self.ubar.iter().map(|u| -u).collect();
        let mut hessian = alloc::vec![0.0; k * k];
        for &(i, w) in &self.active {
            let u = self.basis.row(i);
            let v = self.argument(i, lambda);
            if !criterion.in_domain(v) {
                return Err(Error::DomainViolation { index: i, value: v });
            }
            let (r0, r1, r2) = criterion.derivatives(v);
            acc += r0 * w;
            let g1 = r1 * w;
            let g2 = r2 * w;
            for a in 0..k {
                gradient[a] += g1 * u[a];
                let s = g2 * u[a];
                for b in 0..=a {
                    hessian[a * k + b] += s * u[b];
                }
            }
        }
        let lin: f64 = lambda.iter().zip(self.ubar).map(|(l, u)| l * u).sum();
        let value = acc - lin;
        if !value.is_finite() {
            return Err(Error::DomainViolation {
                index: self.active.first().map_or(0, |a| a.0),
                value,
            });
        }
        for a in 0..k {
            for b in 0..a {
                hessian[b * k + a] = hessian[a * k + b];
            }
        }
        Ok(ObjectiveEval {
            value,
            gradient,
            hessian,
        })
    }

    /// `G(lambda + delta) - G(lambda)` in difference form, so that ascent
    /// near the optimum is not lost to cancellation in `G` itself.
    pub fn increment(&self, criterion: GelCriterion, lambda: &[f64], delta: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for &(i, w) in &self.active {
            let v = self.argument(i, lambda);
            let d = self.argument(i, delta);
            if !criterion.in_domain(v + d) {
                return Err(Error::DomainViolation { index: i, value: v + d });
            }
            acc += criterion.rho_increment(v, d) * w;
        }
        let lin: f64 = delta.iter().zip(self.ubar).map(|(l, u)| l * u).sum();
        let inc = acc - lin;
        if inc.is_finite() {
            Ok(inc)
        } else {
            Err(Error::DomainViolation {
                index: self.active.first().map_or(0, |a| a.0),
                value: inc,
            })
        }
    }

    /// Default start: unit-weight argument on the constant coordinate.
    pub fn default_init(&self, criterion: GelCriterion) -> Vec<f64> {
        let mut l = alloc::vec![0.0; self.dim()];
        l[0] = criterion.unit_weight_argument();
        l
    }

    /// Damped Newton ascent with Armijo backtracking.
    pub fn solve(&self, criterion: GelCriterion, init: Option<&[f64]>) -> WeightFit {
        let k = self.dim();
        let mut lambda = match init {
            Some(l) if l.len() == k && self.value(criterion, l).is_ok() => l.to_vec(),
            _ => self.default_init(criterion),
        };
        let mut current = self
            .evaluate(criterion, &lambda)
            .expect("default start is inside every criterion domain");
        let mut level = current.value;
        let mut history = alloc::vec![level];
        let mut converged = false;
        let mut iterations = 0;
        let mut neg_h = alloc::vec![0.0; k * k];
        loop {
            if norm(&lambda) > DIVERGENCE_NORM {
                break;
            }
            let gnorm = norm(&current.gradient);
            if gnorm <= GRADIENT_TOL * (1.0 + current.value.abs()) {
                converged = true;
                break;
            }
            if iterations == MAX_ITERATIONS {
                break;
            }
            for (n, h) in neg_h.iter_mut().zip(&current.hessian) {
                *n = -h;
            }
            let Some((dir, _)) = linalg::solve_spd_regularized(&neg_h, k, &current.gradient, HESSIAN_RIDGE) else {
                break;
            };
            let slope: f64 = dir.iter().zip(&current.gradient).map(|(d, g)| d * g).sum();
            let mut step = 1.0;
            let mut accepted = None;
            while step >= MIN_STEP {
                let delta: Vec<f64> = dir.iter().map(|d| step * d).collect();
                if let Ok(inc) = self.increment(criterion, &lambda, &delta) {
                    if inc > 0.0 && inc >= ARMIJO * step * slope {
                        let cand: Vec<f64> = lambda.iter().zip(&delta).map(|(l, d)| l + d).collect();
                        if let Ok(eval) = self.evaluate(criterion, &cand) {
                            accepted = Some((cand, eval, inc));
                            break;
                        }
                    }
                }
                step *= SHRINK;
            }
            let Some((next, eval, inc)) = accepted else {
                break;
            };
            iterations += 1;
            lambda = next;
            current = eval;
            level += inc;
            history.push(level);
        }
        WeightFit {
            t: self.t,
            gradient_norm: norm(&current.gradient),
            lambda,
            converged,
            iterations,
            objective: current.value,
            effective_kernel_mass: self.mass,
            history,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Dual objective, gradient and Hessian at `lambda`.
pub fn objective(
    basis: &Matrix,
    kernel_w: &[f64],
    ubar: &[f64],
    criterion: GelCriterion,
    lambda: &[f64],
) -> Result<ObjectiveEval> {
    GelProblem::new(f64::NAN, basis, kernel_w, ubar)?.evaluate(criterion, lambda)
}

/// Maximizes the dual objective for truncated kernel weights `kernel_w`.
pub fn solve_lambda(
    t: f64,
    basis: &Matrix,
    kernel_w: &[f64],
    ubar: &[f64],
    criterion: GelCriterion,
    init: Option<&[f64]>,
) -> Result<WeightFit> {
    Ok(GelProblem::new(t, basis, kernel_w, ubar)?.solve(criterion, init))
}

/// `rho'(lambda' u)`, clipped at zero for CUE.
pub fn pi_hat(fit: &WeightFit, criterion: GelCriterion, row: &[f64]) -> f64 {
    let v: f64 = row.iter().zip(&fit.lambda).map(|(u, l)| u * l).sum();
    criterion.rho1(v).max(0.0)
}

/// `pi` at every row of `basis`, plus the number of CUE weights clipped.
pub fn pi_values(fit: &WeightFit, criterion: GelCriterion, basis: &Matrix) -> (Vec<f64>, usize) {
    let mut clipped = 0;
    let pis = basis
        .iter_rows()
        .map(|row| {
            let v: f64 = row.iter().zip(&fit.lambda).map(|(u, l)| u * l).sum();
            let p = criterion.rho1(v);
            if p < 0.0 {
                clipped += 1;
                0.0
            } else {
                p
            }
        })
        .collect();
    (pis, clipped)
}

/// Column means of `basis`.
pub fn basis_mean(basis: &Matrix) -> Vec<f64> {
    basis.col_means()
}
