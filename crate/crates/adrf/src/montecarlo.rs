//! Parallel Monte Carlo studies over the simulation designs.

use std::time::Instant;

use adrf_core::simlab::{
    summarize, EstimatorRun, EstimatorSummary, ReplicationOutcome, GRID_RANGE, ISE_RANGE,
    MAX_SKIPPED_FRACTION, MIN_SAMPLE_SIZE,
};
use adrf_core::{run_replication, EstimatorLabel, SimError, SimModel, StudyConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::fmt_f64;

pub const MIN_REPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub models: Vec<SimModel>,
    pub sizes: Vec<usize>,
    pub errors: Vec<SimError>,
    pub reps: usize,
    pub seed: u64,
    pub study: StudyConfig,
}

impl MonteCarloConfig {
    /// Models 1 and 2, Laplace error, `N = 500`, 200 replications, naive
    /// against weighted estimator at grid-optimal smoothing parameters.
    pub fn fig1(seed: u64) -> Self {
        Self {
            models: vec![SimModel::Model1, SimModel::Model2],
            sizes: vec![500],
            errors: vec![SimError::Laplace],
            reps: 200,
            seed,
            study: StudyConfig {
                estimators: vec![EstimatorLabel::NvGridOptimal, EstimatorLabel::CmGridOptimal],
                ..StudyConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(CliError::Config(format!("need at least {MIN_REPS} replications, got {}", self.reps)));
        }
        if self.models.is_empty() || self.sizes.is_empty() || self.errors.is_empty() {
            return Err(CliError::Config("models, sizes and error kinds must be nonempty".into()));
        }
        if let Some(n) = self.sizes.iter().find(|&&n| n < MIN_SAMPLE_SIZE) {
            return Err(CliError::Config(format!("sample size {n} is below {MIN_SAMPLE_SIZE}")));
        }
        if self.study.estimators.is_empty() {
            return Err(CliError::Config("no estimators requested".into()));
        }
        if self.study.grid_n < 2 {
            return Err(CliError::Config("evaluation grid needs at least 2 points".into()));
        }
        self.study.tuning.simex.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    fn jobs(&self) -> Vec<(SimModel, usize, SimError, usize)> {
        let mut jobs = Vec::new();
        for &m in &self.models {
            for &n in &self.sizes {
                for &e in &self.errors {
                    jobs.extend((0..self.reps).map(|r| (m, n, e, r)));
                }
            }
        }
        jobs
    }
}

/// How curves were scored; fixed by the simulation lab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationInfo {
    pub grid_n: usize,
    pub grid_quantiles: (f64, f64),
    pub ise_quantiles: (f64, f64),
    pub max_skipped_fraction: f64,
    pub skipped_points: String,
}

/// Deterministic payload of a study: identical for identical configs,
/// whatever the thread count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub format_version: u32,
    pub config: MonteCarloConfig,
    pub evaluation: EvaluationInfo,
    pub summaries: Vec<EstimatorSummary>,
    pub failure_rate: f64,
    pub replications: Vec<ReplicationOutcome>,
}

/// Wall-clock facts kept apart from the report payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub seconds: f64,
    pub threads: usize,
    pub replications: usize,
}

impl MonteCarloReport {
    pub fn summary(&self, model: SimModel, n: usize, error: SimError, label: EstimatorLabel) -> Option<&EstimatorSummary> {
        self.summaries
            .iter()
            .find(|s| s.model == model && s.n == n && s.error == error && s.label == label)
    }

    /// One row per replication and estimator:
    /// `model, estimator, N, rep, ise, error`. Failed runs leave `ise` empty.
    pub fn ise_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for o in &self.replications {
            for r in &o.runs {
                rows.push(vec![
                    o.model.id().to_string(),
                    r.label.as_str().to_owned(),
                    o.n.to_string(),
                    o.rep.to_string(),
                    r.ise.map(fmt_f64).unwrap_or_default(),
                    o.error.as_str().to_owned(),
                ]);
            }
        }
        rows
    }
}

pub const ISE_HEADER: [&str; 6] = ["model", "estimator", "N", "rep", "ise", "error"];

/// Runs every replication of every `(model, N, error)` cell on the current
/// rayon pool.
pub fn run_monte_carlo(config: &MonteCarloConfig) -> Result<(MonteCarloReport, RunTiming)> {
    config.validate()?;
    let start = Instant::now();
    let replications: Vec<ReplicationOutcome> = config
        .jobs()
        .into_par_iter()
        .map(|(model, n, error, rep)| {
            run_replication(model, n, error, rep, config.seed, &config.study).unwrap_or_else(|e| ReplicationOutcome {
                model,
                n,
                error,
                rep,
                seed: adrf_core::simlab::replication_seed(config.seed, model, n, error, rep),
                runs: config
                    .study
                    .estimators
                    .iter()
                    .map(|&label| EstimatorRun {
                        label,
                        ise: None,
                        interpolated: 0,
                        failure: Some(e.to_string()),
                        params: None,
                    })
                    .collect(),
            })
        })
        .collect();
    let runs: usize = replications.iter().map(|o| o.runs.len()).sum();
    let failed: usize = replications
        .iter()
        .flat_map(|o| &o.runs)
        .filter(|r| r.ise.is_none())
        .count();
    let report = MonteCarloReport {
        format_version: crate::FORMAT_VERSION,
        config: config.clone(),
        evaluation: EvaluationInfo {
            grid_n: config.study.grid_n,
            grid_quantiles: GRID_RANGE,
            ise_quantiles: ISE_RANGE,
            max_skipped_fraction: MAX_SKIPPED_FRACTION,
            skipped_points: "linearly interpolated from the nearest finite neighbours".into(),
        },
        summaries: summarize(&replications),
        failure_rate: if runs == 0 { 0.0 } else { failed as f64 / runs as f64 },
        replications,
    };
    let timing = RunTiming {
        seconds: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        replications: report.replications.len(),
    };
    Ok((report, timing))
}
