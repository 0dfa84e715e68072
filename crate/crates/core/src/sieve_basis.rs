//! Sieve bases `u_K(x)` over the covariate space.
//!
//! Covariates are mapped affinely onto `[0, 1]^r` (clamping points outside
//! the training range). The first basis function is always the constant 1.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAX_POWER_DEGREE: usize = 20;
pub const DEFAULT_SPLINE_DEGREE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum BasisFamily {
    PowerSeries,
    BSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub k: usize,
    pub spline_degree: usize,
    pub covariate_dim: usize,
}

impl BasisSpec {
    /// A validated spec with the default cubic spline degree.
    pub fn new(family: BasisFamily, k: usize, covariate_dim: usize) -> Result<Self> {
        Self::with_degree(family, k, DEFAULT_SPLINE_DEGREE, covariate_dim)
    }

    pub fn with_degree(family: BasisFamily, k: usize, spline_degree: usize, covariate_dim: usize) -> Result<Self> {
        let spec = Self {
            family,
            k,
            spline_degree,
            covariate_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidBasis("K must be positive".into()));
        }
        if self.covariate_dim == 0 {
            return Err(Error::InvalidBasis("need at least one covariate".into()));
        }
        match self.family {
            BasisFamily::PowerSeries => {
                let degree = power_degree_needed(self.k, self.covariate_dim);
                if degree > MAX_POWER_DEGREE {
                    return Err(Error::BasisOverflow { k: self.k, degree });
                }
            }
            BasisFamily::BSpline => {
                if self.k > 1 && self.per_block() < self.spline_degree + 1 {
                    return Err(Error::InvalidBasis(format!(
                        "B-spline blocks of {} functions cannot carry degree {}",
                        self.per_block(),
                        self.spline_degree
                    )));
                }
            }
        }
        Ok(())
    }

    /// Functions allocated to each covariate's spline block, `ceil(K / r)`.
    pub fn per_block(&self) -> usize {
        self.k.div_ceil(self.covariate_dim)
    }

    /// Smallest valid dimension of at least `k` for this family.
    pub fn smallest_valid_k(family: BasisFamily, k: usize, spline_degree: usize, covariate_dim: usize) -> usize {
        match family {
            BasisFamily::PowerSeries => k.max(1),
            BasisFamily::BSpline => k.max(spline_degree * covariate_dim + 1),
        }
    }
}

/// Columnwise `(min, max)` of the training covariates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl CovariateScaler {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Maps column `j` value `v` into `[0, 1]`, clamping.
    #[inline]
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        ((v - self.min[j]) / (self.max[j] - self.min[j])).clamp(0.0, 1.0)
    }

    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect()
    }
}

pub fn fit_scaler(x: &Matrix) -> Result<CovariateScaler> {
    if x.rows() < 2 {
        return Err(Error::InvalidSample("need at least two observations to scale covariates".into()));
    }
    let mut min = alloc::vec![f64::INFINITY; x.cols()];
    let mut max = alloc::vec![f64::NEG_INFINITY; x.cols()];
    for row in x.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    for j in 0..x.cols() {
        if !(max[j] > min[j]) {
            return Err(Error::DegenerateCovariate { column: j });
        }
    }
    Ok(CovariateScaler { min, max })
}

/// Row `i` of the result is `u_K(x_i)`.
pub fn evaluate_basis(spec: &BasisSpec, scaler: &CovariateScaler, x: &Matrix) -> Result<Matrix> {
    spec.validate()?;
    if spec.covariate_dim != x.cols() || scaler.dim() != x.cols() {
        return Err(Error::InvalidBasis(format!(
            "basis built for {} covariates, data has {}",
            spec.covariate_dim,
            x.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), spec.k);
    let mut scaled = alloc::vec![0.0; x.cols()];
    if spec.k == 1 {
        (0..x.rows()).for_each(|i| out.set(i, 0, 1.0));
        return Ok(out);
    }
    match spec.family {
        BasisFamily::PowerSeries => {
            let exponents = graded_lex_exponents(spec.k, spec.covariate_dim);
            for i in 0..x.rows() {
                for (j, s) in scaled.iter_mut().enumerate() {
                    *s = scaler.scale(j, x.get(i, j));
                }
                let row = out.row_mut(i);
                for (c, e) in exponents.iter().enumerate() {
                    row[c] = e
                        .iter()
                        .zip(&scaled)
                        .map(|(&p, &v)| crate::math::powi(v, p as u32))
                        .product();
                }
            }
        }
        BasisFamily::BSpline => {
            let m = spec.per_block();
            let knots = clamped_uniform_knots(m, spec.spline_degree);
            let mut block = alloc::vec![0.0; m];
            for i in 0..x.rows() {
                let row = out.row_mut(i);
                let mut c = 0;
                'dims: for j in 0..x.cols() {
                    let v = scaler.scale(j, x.get(i, j));
                    bspline_into(&knots, spec.spline_degree, v, &mut block);
                    for &b in &block {
                        if c == spec.k {
                            break 'dims;
                        }
                        row[c] = b;
                        c += 1;
                    }
                }
                row[0] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Degree of the last monomial among the first `k` in graded order.
fn power_degree_needed(k: usize, r: usize) -> usize {
    let mut count = 0usize;
    let mut d = 0usize;
    loop {
        count = count.saturating_add(binomial(d + r - 1, r - 1));
        if count >= k || d > MAX_POWER_DEGREE {
            return d;
        }
        d += 1;
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Exponent vectors of the first `k` monomials in `r` variables: by total
/// degree, then lexicographically with higher powers of earlier variables
/// first.
pub fn graded_lex_exponents(k: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(k);
    let mut d = 0;
    while out.len() < k {
        let mut current = alloc::vec![0; r];
        push_degree(d, 0, &mut current, &mut out, k);
        d += 1;
    }
    out
}

fn push_degree(remaining: usize, var: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, k: usize) {
    if out.len() == k {
        return;
    }
    if var == current.len() - 1 {
        current[var] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        push_degree(remaining - e, var + 1, current, out, k);
    }
    current[var] = 0;
}

/// Knot vector on `[0, 1]` for `m` B-splines of degree `p`: end knots
/// repeated `p + 1` times, `m - p - 1` uniform interior knots.
pub fn clamped_uniform_knots(m: usize, p: usize) -> Vec<f64> {
    let interior = m.saturating_sub(p + 1);
    let mut knots = alloc::vec![0.0; p + 1];
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(core::iter::repeat_n(1.0, p + 1));
    knots
}

/// All `m` B-spline values of degree `p` at `x` (Cox–de Boor), written into
/// `out`. The right endpoint belongs to the last interval.
pub fn bspline_into(knots: &[f64], p: usize, x: f64, out: &mut [f64]) {
    let m = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    if m == 1 && p == 0 {
        out[0] = 1.0;
        return;
    }
    // locate span: knots[span] <= x < knots[span + 1]
    let mut span = p;
    while span < m - 1 && x >= knots[span + 1] {
        span += 1;
    }
    let mut n = alloc::vec![0.0; p + 1];
    let mut left = alloc::vec![0.0; p + 1];
    let mut right = alloc::vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (j, v) in n.iter().enumerate() {
        out[span - p + j] = *v;
    }
}
