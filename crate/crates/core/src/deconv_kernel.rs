//! Base kernel, deconvolution kernels and measurement-error models.
//!
//! The base kernel `L` is defined through its Fourier transform
//! `phi_L(w) = (1 - w^2)^3` on `[-1, 1]`. Folding by evenness,
//!
//! ```text
//! L(x)   = (1/pi) \int_0^1 cos(w x) phi_L(w) dw
//! L_U(v) = (1/pi) \int_0^1 cos(w v) phi_L(w) / phi_U(w / h) dw
//! ```
//!
//! both evaluated with a fixed Gauss–Legendre rule on `[0, 1]`. For Laplace
//! error `1/phi_U(w/h) = 1 + sigma^2 w^2 / (2 h^2)`, so
//! `L_U = L - sigma^2/(2h^2) L''` exactly.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::quadrature::GaussLegendre;
use crate::rng;

pub const DEFAULT_QUADRATURE_ORDER: usize = 128;
pub const MIN_QUADRATURE_ORDER: usize = 64;
/// Tabulated characteristic functions are never allowed below this value.
pub const CF_RIDGE_FLOOR: f64 = 0.05;
/// Largest admissible Gaussian-error exponent `sigma^2 / (2 h^2)`.
pub const GAUSSIAN_EXPONENT_CAP: f64 = 700.0;
pub const MIN_REPLICATE_PAIRS: usize = 50;
/// A truncated weight vector whose mass is below this fraction of the
/// kernel peak counts as empty: no observation is inside the kernel support.
pub const EFFECTIVE_MASS_FLOOR: f64 = 1e-5;
/// Spacing of [`KernelTable`] nodes, in standardized kernel units.
pub const TABLE_STEP: f64 = 1.0 / 32.0;

/// `phi_L(w) = (1 - w^2)^3` on `[-1, 1]`, zero elsewhere.
#[inline]
pub fn kernel_ft(w: f64) -> f64 {
    if w.abs() >= 1.0 {
        0.0
    } else {
        let a = 1.0 - w * w;
        a * a * a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum ErrorKind {
    Laplace,
    Gaussian,
    ReplicateEstimated,
    None,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Laplace => "laplace",
            ErrorKind::Gaussian => "gaussian",
            ErrorKind::ReplicateEstimated => "replicate_estimated",
            ErrorKind::None => "none",
        }
    }
}

/// Characteristic function tabulated on `w = k * step`, `k = 0, 1, ...`,
/// interpolated linearly and extended by evenness. The last entry is held
/// beyond the grid; when the ridge floor was hit it equals the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct CfTable {
    step: f64,
    values: Vec<f64>,
    floored_from: Option<f64>,
    differences: Vec<f64>,
}

impl CfTable {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grid frequency from which the ridge floor holds, if it was reached.
    pub fn floored_from(&self) -> Option<f64> {
        self.floored_from
    }

    /// Replicate differences `S_j1 - S_j2` kept for resampling errors.
    pub fn differences(&self) -> &[f64] {
        &self.differences
    }

    fn eval(&self, w: f64) -> f64 {
        let a = w.abs() / self.step;
        let last = self.values.len() - 1;
        if a >= last as f64 {
            return self.values[last];
        }
        let k = a as usize;
        let frac = a - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }
}

/// Law of the measurement error `U` in `S = T + U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    kind: ErrorKind,
    variance: f64,
    table: Option<Arc<CfTable>>,
}

impl ErrorModel {
    /// No measurement error: `phi_U = 1`.
    pub fn none() -> Self {
        Self {
            kind: ErrorKind::None,
            variance: 0.0,
            table: None,
        }
    }

    /// Laplace error with `phi_U(w) = 1 / (1 + variance w^2 / 2)`.
    pub fn laplace(variance: f64) -> Result<Self> {
        Self::parametric(ErrorKind::Laplace, variance)
    }

    /// Gaussian error with `phi_U(w) = exp(-variance w^2 / 2)`.
    pub fn gaussian(variance: f64) -> Result<Self> {
        Self::parametric(ErrorKind::Gaussian, variance)
    }

    /// Laplace, Gaussian or none; a zero variance always yields `None`.
    pub fn parametric(kind: ErrorKind, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::param("error variance must be finite and nonnegative"));
        }
        match kind {
            ErrorKind::None => Ok(Self::none()),
            _ if variance == 0.0 => Ok(Self::none()),
            ErrorKind::Laplace | ErrorKind::Gaussian => Ok(Self {
                kind,
                variance,
                table: None,
            }),
            ErrorKind::ReplicateEstimated => Err(Error::param(
                "replicate-estimated error models come from replicate pairs",
            )),
        }
    }

    /// Rebuilds a tabulated model, e.g. from a saved descriptor.
    pub fn from_table(
        step: f64,
        values: Vec<f64>,
        floored_from: Option<f64>,
        differences: Vec<f64>,
    ) -> Result<Self> {
        if !(step > 0.0) || values.is_empty() {
            return Err(Error::param("characteristic-function table needs a positive step and values"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::param("tabulated characteristic function must be positive"));
        }
        let variance = if differences.is_empty() {
            0.0
        } else {
            differences.iter().map(|d| d * d).sum::<f64>() / (2.0 * differences.len() as f64)
        };
        Ok(Self {
            kind: ErrorKind::ReplicateEstimated,
            variance,
            table: Some(Arc::new(CfTable {
                step,
                values,
                floored_from,
                differences,
            })),
        })
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn cf_table(&self) -> Option<&CfTable> {
        self.table.as_deref()
    }

    /// Characteristic function `phi_U(w)`.
    pub fn cf(&self, w: f64) -> f64 {
        match self.kind {
            ErrorKind::None => 1.0,
            ErrorKind::Laplace => 1.0 / (1.0 + 0.5 * self.variance * w * w),
            ErrorKind::Gaussian => math::exp(-0.5 * self.variance * w * w),
            ErrorKind::ReplicateEstimated => self.table.as_ref().map_or(1.0, |t| t.eval(w)),
        }
    }

    /// Draws one error value. Replicate-estimated models resample
    /// `±(S_j1 - S_j2)/sqrt(2)`, which has the error variance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            ErrorKind::None => 0.0,
            ErrorKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                math::sqrt(self.variance) * z
            }
            ErrorKind::Laplace => {
                let scale = math::sqrt(0.5 * self.variance);
                loop {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    let a = 1.0 - 2.0 * u.abs();
                    if a > 0.0 {
                        let mag = -scale * math::ln(a);
                        return if u < 0.0 { -mag } else { mag };
                    }
                }
            }
            ErrorKind::ReplicateEstimated => {
                let diffs = self.table.as_ref().map(|t| t.differences()).unwrap_or(&[]);
                if diffs.is_empty() {
                    return 0.0;
                }
                let d = diffs[rng.random_range(0..diffs.len())] / core::f64::consts::SQRT_2;
                if rng.random::<bool>() {
                    d
                } else {
                    -d
                }
            }
        }
    }
}

/// The fixed base kernel and its quadrature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelSpec {
    pub quadrature_order: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
        }
    }
}

impl KernelSpec {
    pub fn new(quadrature_order: usize) -> Result<Self> {
        if quadrature_order < MIN_QUADRATURE_ORDER {
            return Err(Error::param("quadrature order must be at least 64"));
        }
        Ok(Self { quadrature_order })
    }

    /// Gauss–Legendre nodes and weights on `[0, 1]`.
    pub fn unit_rule(&self) -> (Vec<f64>, Vec<f64>) {
        GaussLegendre::new(self.quadrature_order).on_interval(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DeconvMode {
    ClosedFormLaplace,
    QuadratureGeneric,
    PlainKernel,
}

/// Anything that can weight observation `s` for target point `t`.
pub trait SmoothingKernel {
    fn bandwidth(&self) -> f64;

    /// Kernel value at the standardized argument `v = (t - s) / h`.
    fn eval(&self, v: f64) -> f64;

    #[inline]
    fn at(&self, t: f64, s: f64) -> f64 {
        self.eval((t - s) / self.bandwidth())
    }

    fn peak(&self) -> f64 {
        self.eval(0.0)
    }
}

/// Evaluates `L_U(v)` for one error model and bandwidth.
#[derive(Debug, Clone)]
pub struct DeconvEvaluator {
    error: ErrorModel,
    kernel: KernelSpec,
    h: f64,
    mode: DeconvMode,
    nodes: Vec<f64>,
    coef: Vec<f64>,
    laplace_factor: f64,
}

impl DeconvEvaluator {
    /// Picks the mode from the error kind: closed form for Laplace, the plain
    /// kernel for no error, quadrature otherwise.
    pub fn new(error: &ErrorModel, kernel: KernelSpec, h: f64) -> Result<Self> {
        let mode = match error.kind() {
            ErrorKind::Laplace => DeconvMode::ClosedFormLaplace,
            ErrorKind::None => DeconvMode::PlainKernel,
            _ => DeconvMode::QuadratureGeneric,
        };
        Self::with_mode(error, kernel, h, mode)
    }

    pub fn with_mode(error: &ErrorModel, kernel: KernelSpec, h: f64, mode: DeconvMode) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::param("bandwidth must be positive and finite"));
        }
        if kernel.quadrature_order < MIN_QUADRATURE_ORDER {
            return Err(Error::param("quadrature order must be at least 64"));
        }
        match (mode, error.kind()) {
            (DeconvMode::ClosedFormLaplace, k) if k != ErrorKind::Laplace => {
                return Err(Error::param("closed-form mode requires Laplace error"))
            }
            (DeconvMode::PlainKernel, k) if k != ErrorKind::None => {
                return Err(Error::param("plain-kernel mode requires no measurement error"))
            }
            _ => {}
        }
        if error.kind() == ErrorKind::Gaussian {
            let exponent = error.variance() / (2.0 * h * h);
            if exponent > GAUSSIAN_EXPONENT_CAP {
                return Err(Error::OverflowRisk { exponent });
            }
        }
        let (nodes, weights) = kernel.unit_rule();
        let coef = nodes
            .iter()
            .zip(&weights)
            .map(|(&w, &wt)| {
                let base = wt * kernel_ft(w) / PI;
                match mode {
                    DeconvMode::QuadratureGeneric => base / error.cf(w / h),
                    _ => base,
                }
            })
            .collect();
        let laplace_factor = match mode {
            DeconvMode::ClosedFormLaplace => error.variance() / (2.0 * h * h),
            _ => 0.0,
        };
        Ok(Self {
            error: error.clone(),
            kernel,
            h,
            mode,
            nodes,
            coef,
            laplace_factor,
        })
    }

    /// The base kernel `L` itself (no error, unit bandwidth).
    pub fn plain(kernel: KernelSpec) -> Self {
        Self::with_mode(&ErrorModel::none(), kernel, 1.0, DeconvMode::PlainKernel)
            .expect("plain kernel is always valid")
    }

    pub fn mode(&self) -> DeconvMode {
        self.mode
    }

    pub fn error(&self) -> &ErrorModel {
        &self.error
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    /// `L_U(v)`.
    pub fn value(&self, v: f64) -> f64 {
        match self.mode {
            DeconvMode::ClosedFormLaplace => {
                let mut l = 0.0;
                let mut l2 = 0.0;
                for (&w, &c) in self.nodes.iter().zip(&self.coef) {
                    let cw = c * math::cos(w * v);
                    l += cw;
                    l2 -= w * w * cw;
                }
                l - self.laplace_factor * l2
            }
            _ => self
                .nodes
                .iter()
                .zip(&self.coef)
                .map(|(&w, &c)| c * math::cos(w * v))
                .sum(),
        }
    }

    /// `(L_U(v), L_U'(v))`.
    pub fn value_and_derivative(&self, v: f64) -> (f64, f64) {
        let mut val = 0.0;
        let mut der = 0.0;
        for (&w, &c) in self.nodes.iter().zip(&self.coef) {
            let (s, co) = math::sincos(w * v);
            let m = match self.mode {
                DeconvMode::ClosedFormLaplace => c * (1.0 + self.laplace_factor * w * w),
                _ => c,
            };
            val += m * co;
            der -= m * w * s;
        }
        (val, der)
    }
}

impl SmoothingKernel for DeconvEvaluator {
    fn bandwidth(&self) -> f64 {
        self.h
    }

    #[inline]
    fn eval(&self, v: f64) -> f64 {
        self.value(v)
    }
}

/// `L(x)` by Gauss–Legendre quadrature of the default order.
///
/// Builds the rule on every call; loops should hold a
/// [`DeconvEvaluator::plain`] instead.
pub fn base_kernel(x: f64) -> f64 {
    DeconvEvaluator::plain(KernelSpec::default()).value(x)
}

/// `L_U(v)` for an evaluator.
pub fn deconv_value(evaluator: &DeconvEvaluator, v: f64) -> f64 {
    evaluator.value(v)
}

/// Standard normal density kernel, used by the naive comparator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub h: f64,
}

impl SmoothingKernel for GaussianKernel {
    fn bandwidth(&self) -> f64 {
        self.h
    }

    #[inline]
    fn eval(&self, v: f64) -> f64 {
        math::norm_pdf(v)
    }
}

/// `L_U` tabulated on `[0, vmax]` with cubic Hermite interpolation; arguments
/// beyond the table fall back to direct quadrature.
#[derive(Debug, Clone)]
pub struct KernelTable {
    inv_step: f64,
    /// `inv_step / h`, so `at(t, s)` needs no division.
    scale: f64,
    vmax: f64,
    /// Cubic coefficients per cell in the local coordinate `x in [0, 1)`.
    cells: Vec<[f64; 4]>,
    direct: DeconvEvaluator,
}

impl KernelTable {
    pub fn build(direct: DeconvEvaluator, vmax: f64) -> Self {
        let n = table_len(vmax);
        let nodes = (0..n)
            .map(|k| {
                let (v, d) = direct.value_and_derivative(k as f64 * TABLE_STEP);
                (v, d * TABLE_STEP)
            })
            .collect();
        Self::from_nodes(direct, nodes)
    }

    /// `nodes[k]` holds the value and the step-scaled derivative at
    /// `k * TABLE_STEP`.
    fn from_nodes(direct: DeconvEvaluator, nodes: Vec<(f64, f64)>) -> Self {
        let n = nodes.len();
        let cells = nodes
            .windows(2)
            .map(|w| {
                let ((p0, m0), (p1, m1)) = (w[0], w[1]);
                [p0, m0, 3.0 * (p1 - p0) - 2.0 * m0 - m1, 2.0 * (p0 - p1) + m0 + m1]
            })
            .collect();
        Self {
            inv_step: 1.0 / TABLE_STEP,
            scale: 1.0 / (TABLE_STEP * direct.h),
            vmax: (n - 2) as f64 * TABLE_STEP,
            cells,
            direct,
        }
    }

    pub fn direct(&self) -> &DeconvEvaluator {
        &self.direct
    }

    #[inline]
    fn cell(&self, x: f64) -> f64 {
        let k = x as usize;
        let t = x - k as f64;
        let c = &self.cells[k];
        c[0] + t * (c[1] + t * (c[2] + t * c[3]))
    }

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        let a = v.abs();
        if a >= self.vmax {
            return self.direct.value(a);
        }
        self.cell(a * self.inv_step)
    }
}

impl SmoothingKernel for KernelTable {
    fn bandwidth(&self) -> f64 {
        self.direct.h
    }

    #[inline]
    fn eval(&self, v: f64) -> f64 {
        self.value(v)
    }

    #[inline]
    fn at(&self, t: f64, s: f64) -> f64 {
        let x = (t - s).abs() * self.scale;
        if x >= self.vmax * self.inv_step {
            return self.direct.value((t - s) / self.direct.h);
        }
        self.cell(x)
    }
}

fn table_len(vmax: f64) -> usize {
    math::ceil(vmax.clamp(1.0, 1e5) / TABLE_STEP) as usize + 2
}

/// `L` and its first three derivatives at the first `n` table nodes.
fn laplace_base(kernel: KernelSpec, n: usize) -> Vec<[f64; 4]> {
    let plain = DeconvEvaluator::plain(kernel);
    (0..n)
        .map(|k| {
            let v = k as f64 * TABLE_STEP;
            let mut out = [0.0; 4];
            for (&w, &c) in plain.nodes.iter().zip(&plain.coef) {
                let (s, co) = math::sincos(w * v);
                let w2 = w * w;
                out[0] += c * co;
                out[1] -= c * w * s;
                out[2] -= c * w2 * co;
                out[3] += c * w2 * w * s;
            }
            out
        })
        .collect()
}

/// The kernel used on hot paths: a table for genuine deconvolution kernels,
/// the exact quadrature for the plain kernel (so error-free runs reproduce
/// [`base_kernel`] bit for bit).
#[derive(Debug, Clone)]
pub enum FastDeconv {
    Direct(DeconvEvaluator),
    Table(KernelTable),
}

impl FastDeconv {
    /// `span` is the largest `|t - s|` the kernel will see.
    pub fn new(error: &ErrorModel, kernel: KernelSpec, h: f64, span: f64) -> Result<Self> {
        let direct = DeconvEvaluator::new(error, kernel, h)?;
        Ok(match direct.mode() {
            DeconvMode::PlainKernel => FastDeconv::Direct(direct),
            _ => FastDeconv::Table(KernelTable::build(direct, span / h + 1.0)),
        })
    }

    /// Always tabulated, including the plain kernel; for comparators where
    /// table accuracy (about 1e-10 of the peak) is enough.
    pub fn tabulated(error: &ErrorModel, kernel: KernelSpec, h: f64, span: f64) -> Result<Self> {
        let direct = DeconvEvaluator::new(error, kernel, h)?;
        Ok(FastDeconv::Table(KernelTable::build(direct, span / h + 1.0)))
    }

    /// One kernel per bandwidth in `hs`. Laplace tables share a single
    /// tabulation of `L` and its derivatives, since `L_U = L - c L''` with
    /// `c = sigma^2/(2h^2)` on the same standardized nodes.
    pub fn family(error: &ErrorModel, kernel: KernelSpec, hs: &[f64], span: f64) -> Result<Vec<Self>> {
        if error.kind() != ErrorKind::Laplace || hs.is_empty() {
            return hs.iter().map(|&h| Self::new(error, kernel, h, span)).collect();
        }
        let evaluators = hs
            .iter()
            .map(|&h| DeconvEvaluator::new(error, kernel, h))
            .collect::<Result<Vec<_>>>()?;
        let longest = hs.iter().map(|&h| table_len(span / h + 1.0)).max().unwrap_or(2);
        let base = laplace_base(kernel, longest);
        Ok(evaluators
            .into_iter()
            .map(|direct| {
                let n = table_len(span / direct.h + 1.0);
                let f = direct.laplace_factor;
                let nodes = base[..n]
                    .iter()
                    .map(|b| (b[0] - f * b[2], (b[1] - f * b[3]) * TABLE_STEP))
                    .collect();
                FastDeconv::Table(KernelTable::from_nodes(direct, nodes))
            })
            .collect())
    }

    pub fn evaluator(&self) -> &DeconvEvaluator {
        match self {
            FastDeconv::Direct(d) => d,
            FastDeconv::Table(t) => t.direct(),
        }
    }
}

impl SmoothingKernel for FastDeconv {
    fn bandwidth(&self) -> f64 {
        self.evaluator().h
    }

    #[inline]
    fn eval(&self, v: f64) -> f64 {
        match self {
            FastDeconv::Direct(d) => d.value(v),
            FastDeconv::Table(t) => t.value(v),
        }
    }

    #[inline]
    fn at(&self, t: f64, s: f64) -> f64 {
        match self {
            FastDeconv::Direct(d) => d.value((t - s) / d.h),
            FastDeconv::Table(k) => k.at(t, s),
        }
    }
}

/// Kernel weights `L_U((t - s_i)/h)`, negatives set to zero when `truncate`.
///
/// Fails with [`Error::AllWeightsZero`] when the (truncated) weights carry
/// less mass than [`EFFECTIVE_MASS_FLOOR`] times the kernel peak.
pub fn kernel_weights<K: SmoothingKernel + ?Sized>(
    kernel: &K,
    t: f64,
    s: &[f64],
    truncate: bool,
) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::param("kernel weights need at least one observation"));
    }
    let mut w: Vec<f64> = s.iter().map(|&si| kernel.at(t, si)).collect();
    if truncate {
        w.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mass: f64 = if truncate {
        w.iter().sum()
    } else {
        w.iter().map(|v| v.abs()).sum()
    };
    if !(mass > EFFECTIVE_MASS_FLOOR * kernel.peak().abs()) {
        return Err(Error::AllWeightsZero { t });
    }
    Ok(w)
}

/// Result of the Monte Carlo check `E[L_U((t - S)/h) | T = t0] = L((t - t0)/h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnbiasednessCheck {
    pub mc_mean: f64,
    pub mc_se: f64,
    pub target: f64,
}

/// Simulates `S_i = t0 + U_i` and compares the mean deconvolution kernel
/// weight with the error-free kernel weight at `T = t0`.
pub fn conditional_unbiasedness_check(
    error: &ErrorModel,
    h: f64,
    t: f64,
    t0: f64,
    n_mc: usize,
    seed: u64,
) -> Result<UnbiasednessCheck> {
    if n_mc < 10_000 {
        return Err(Error::param("n_mc must be at least 10^4"));
    }
    let spec = KernelSpec::default();
    let lu = DeconvEvaluator::new(error, spec, h)?;
    let target = DeconvEvaluator::plain(spec).value((t - t0) / h);
    let mut rng = rng::stream(seed, &[0x0C0D_E5]);
    // Welford: exact for constant draws
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n_mc {
        let s = t0 + error.sample(&mut rng);
        let x = lu.value((t - s) / h);
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (n_mc - 1) as f64;
    Ok(UnbiasednessCheck {
        mc_mean: mean,
        mc_se: math::sqrt(var / n_mc as f64),
        target,
    })
}

/// Estimates `phi_U` from replicated measurements `(S_j1, S_j2)` as
/// `|N^-1 sum_j cos(w (S_j1 - S_j2))|^(1/2)`, tabulated out to the first grid
/// frequency where it drops below [`CF_RIDGE_FLOOR`] and held at the floor
/// from there on.
pub fn estimate_cf_from_replicates(pairs: &[(f64, f64)]) -> Result<ErrorModel> {
    if pairs.len() < MIN_REPLICATE_PAIRS {
        return Err(Error::InsufficientReplicates { found: pairs.len() });
    }
    if pairs.iter().any(|(a, b)| !(a.is_finite() && b.is_finite())) {
        return Err(Error::InvalidSample("replicate pairs must be finite".into()));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let rms = math::sqrt(diffs.iter().map(|d| d * d).sum::<f64>() / n);
    const MAX_POINTS: usize = 5000;
    let step = if rms > 0.0 { 0.02 / rms } else { 0.01 };
    let mut values = Vec::new();
    let mut floored_from = None;
    for k in 0..MAX_POINTS {
        let w = k as f64 * step;
        let c = diffs.iter().map(|d| math::cos(w * d)).sum::<f64>() / n;
        let phi = math::sqrt(c.abs());
        if phi < CF_RIDGE_FLOOR {
            values.push(CF_RIDGE_FLOOR);
            floored_from = Some(w);
            break;
        }
        values.push(phi);
    }
    ErrorModel::from_table(step, values, floored_from, diffs)
}
