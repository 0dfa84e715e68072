//! Average dose-response estimation for a continuous treatment that is only
//! observed through classical measurement error `S = T + U`.
//!
//! The pipeline has four numerical layers:
//!
//! * [`deconv_kernel`]: the base kernel `L` (Fourier transform `(1 - w^2)^3`
//!   on `[-1, 1]`), deconvolution kernels `L_U` for Laplace, Gaussian and
//!   replicate-estimated error laws, and fast tabulated evaluation.
//! * [`sieve_basis`] and [`gel_weights`]: local generalized empirical
//!   likelihood weights `pi(t, x) = rho'(lambda_t' u_K(x))`, fitted by damped
//!   Newton ascent under deconvolution-kernel localisation.
//! * [`estimator`]: the weighted local-constant deconvolution estimator of
//!   `mu(t) = E[Y*(t)]`, plus the oracle and naive comparators, the outcome
//!   regression `m(t, x)` and the deconvolution density estimate of `f_T`.
//! * [`tuning`] and [`inference`]: plug-in / GCV / SIMEX smoothing-parameter
//!   selection with local-constant extrapolation, and undersmoothed pointwise
//!   confidence intervals built from empirical influence values.
//!
//! [`simlab`] carries the four simulation designs, ISE evaluation and the
//! per-replication estimator runner used by Monte Carlo studies.
//!
//! The crate is `no_std` and only needs `alloc`. IO, CLI and the parallel
//! Monte Carlo driver live in the companion `adrf` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod deconv_kernel;
pub mod error;
pub mod estimator;
pub mod gel_weights;
pub mod inference;
pub mod linalg;
pub mod math;
pub mod quadrature;
pub mod rng;
pub mod sieve_basis;
pub mod simlab;
pub mod tuning;

pub use deconv_kernel::{
    base_kernel, conditional_unbiasedness_check, estimate_cf_from_replicates, kernel_weights,
    DeconvEvaluator, DeconvMode, ErrorKind, ErrorModel, FastDeconv, GaussianKernel, KernelSpec,
    KernelTable, SmoothingKernel,
};
pub use error::{Error, Result};
pub use estimator::{
    f_t_hat, m_hat, mu_hat, mu_oracle, naive_mu, naive_mu_with_params, AdrfCurve,
    EstimatorConfig, EstimatorVariant, ObservedSample, OutcomeRegression,
};
pub use gel_weights::{GelCriterion, WeightFit};
pub use inference::{ci_pointwise, influence_values, CiBand, PlugIns};
pub use linalg::Matrix;
pub use simlab::{generate, ise, run_replication, EstimatorLabel, SimError, SimModel, StudyConfig};
pub use sieve_basis::{evaluate_basis, fit_scaler, BasisFamily, BasisSpec, CovariateScaler};
pub use tuning::{
    plug_in_bandwidth, select_k, simex_select_h, two_step_tune, KSelectConfig, Provenance,
    SimexConfig, SimexDiagnostics, SmoothingParams, TuningConfig,
};
