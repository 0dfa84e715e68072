//! Two-step tuning with SIMEX branches spread over the rayon pool.
//!
//! Each branch draws from its own seeded stream and results are combined in
//! branch order, so the output equals the sequential computation bit for bit.

use adrf_core::estimator::EstimatorVariant;
use adrf_core::tuning::{assemble, first_step, SimexDiagnostics, SimexPlan};
use adrf_core::{EstimatorConfig, ObservedSample, Result, SimexConfig, SmoothingParams, TuningConfig};
use rayon::prelude::*;

pub fn simex_select_h(
    sample: &ObservedSample,
    h_pi: f64,
    k: usize,
    estimator: &EstimatorConfig,
    config: &SimexConfig,
    variant: EstimatorVariant,
) -> Result<(f64, SimexDiagnostics)> {
    let plan = SimexPlan::new(sample, h_pi, k, estimator, config, variant)?;
    let results = (0..plan.branches())
        .into_par_iter()
        .map(|d| plan.run_branch(d))
        .collect::<Result<Vec<_>>>()?;
    plan.finish(results)
}

pub fn two_step_tune(
    sample: &ObservedSample,
    estimator: &EstimatorConfig,
    config: &TuningConfig,
    variant: EstimatorVariant,
) -> Result<SmoothingParams> {
    let (h_pi, sel) = first_step(sample, estimator, config)?;
    let (h, simex) = simex_select_h(sample, h_pi, sel.k, estimator, &config.simex, variant)?;
    Ok(assemble(h_pi, sel, h, simex))
}
