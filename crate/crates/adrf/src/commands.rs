//! Implementations of the subcommands. Each returns the files it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adrf_core::deconv_kernel::ErrorKind;
use adrf_core::estimator::{default_grid, EstimatorVariant, DEFAULT_TRIM};
use adrf_core::inference::ALPHA_RANGE;
use adrf_core::math;
use adrf_core::{
    ci_pointwise, estimate_cf_from_replicates, mu_hat, AdrfCurve, CiBand, EstimatorConfig, EstimatorLabel,
    ErrorModel, ObservedSample, SimError, SimModel, SmoothingParams, TuningConfig,
};
use serde::Serialize;

use crate::cli::{
    CiArgs, DataArgs, ErrorArgs, ErrorKindArg, EstimateArgs, EstimatorArgs, GridArgs, ParamArgs, Preset,
    ReplicatePhiArgs, ReportArgs, SimulateArgs, TuneArgs,
};
use crate::config::{ErrorModelDescriptor, ErrorModelFile, SimexFile};
use crate::error::{CliError, Result};
use crate::io::{self, fmt_f64};
use crate::montecarlo::{run_monte_carlo, MonteCarloConfig, ISE_HEADER};
use crate::{parallel, FORMAT_VERSION};

/// How the error model was declared on the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    Variance { kind: ErrorKind, variance: f64 },
    RatioOfVarS { kind: ErrorKind, ratio: f64 },
    None,
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputEcho {
    pub path: String,
    pub rows: usize,
    pub covariates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridEcho {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub from_sample_quantiles: Option<(f64, f64)>,
}

/// Everything needed to repeat a run on the same input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunProvenance {
    pub format_version: u32,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub input: InputEcho,
    pub error_source: ErrorSource,
    pub error_model: ErrorModelDescriptor,
    pub estimator: EstimatorConfig,
    pub tuning: TuningConfig,
    pub params_source: &'static str,
    pub params: SmoothingParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridEcho>,
}

#[derive(Serialize)]
struct CurveFile<'a> {
    provenance: &'a RunProvenance,
    curve: &'a AdrfCurve,
}

#[derive(Serialize)]
struct BandFile<'a> {
    provenance: &'a RunProvenance,
    alpha: f64,
    z: f64,
    undersmooth_factor: f64,
    undersmoothed_params: &'a SmoothingParams,
    warnings: Vec<String>,
    band: &'a CiBand,
}

#[derive(Serialize)]
struct ParamsFile<'a> {
    provenance: &'a RunProvenance,
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn resolve_error(args: &ErrorArgs, s: &[f64]) -> Result<(ErrorModel, ErrorSource)> {
    let kind = |k: ErrorKindArg| match k {
        ErrorKindArg::Laplace => ErrorKind::Laplace,
        ErrorKindArg::Gaussian => ErrorKind::Gaussian,
        ErrorKindArg::None => ErrorKind::None,
    };
    let bad = |msg: &str| Err(CliError::Input(msg.to_owned()));
    match (&args.error_model, args.error_kind, args.error_variance, args.error_ratio) {
        (Some(path), None, None, None) => {
            let file: ErrorModelFile = io::read_json(path)?;
            let model = file.error_model.to_model()?;
            Ok((model, ErrorSource::File { path: path.display().to_string() }))
        }
        (Some(_), ..) => bad("--error-model cannot be combined with --error-kind, --error-variance or --error-ratio"),
        (None, Some(ErrorKindArg::None), None, None) => Ok((ErrorModel::none(), ErrorSource::None)),
        (None, Some(ErrorKindArg::None), ..) => bad("--error-kind none takes no variance"),
        (None, Some(k), Some(v), None) => {
            let model = ErrorModel::parametric(kind(k), v).map_err(|e| CliError::Input(e.to_string()))?;
            Ok((model, ErrorSource::Variance { kind: kind(k), variance: v }))
        }
        (None, Some(k), None, Some(r)) => {
            if !(r.is_finite() && r >= 0.0) {
                return bad("--error-ratio must be finite and nonnegative");
            }
            let (_, var_s) = math::mean_var(s);
            let model =
                ErrorModel::parametric(kind(k), r * var_s).map_err(|e| CliError::Input(e.to_string()))?;
            Ok((model, ErrorSource::RatioOfVarS { kind: kind(k), ratio: r }))
        }
        (None, Some(_), Some(_), Some(_)) => bad("give either --error-variance or --error-ratio, not both"),
        (None, Some(_), None, None) => bad("--error-kind needs --error-variance or --error-ratio"),
        (None, None, ..) => bad("declare the measurement error with --error-kind or --error-model"),
    }
}

fn estimator_config(args: &EstimatorArgs) -> EstimatorConfig {
    EstimatorConfig {
        criterion: args.criterion.into(),
        basis_family: args.basis.into(),
        ..EstimatorConfig::default()
    }
}

fn tuning_config(config: Option<&Path>, seed: Option<u64>) -> Result<TuningConfig> {
    let mut tuning = TuningConfig::default();
    if let Some(path) = config {
        tuning.simex = SimexFile::load(path)?.apply(&tuning.simex)?;
    }
    if let Some(seed) = seed {
        tuning.simex.seed = seed;
    }
    Ok(tuning)
}

/// A loaded sample with its resolved configuration.
struct Prepared {
    sample: ObservedSample,
    input: InputEcho,
    error_source: ErrorSource,
    estimator: EstimatorConfig,
    tuning: TuningConfig,
}

fn prepare(data: &DataArgs) -> Result<Prepared> {
    let raw = io::read_sample(&data.input)?;
    let (error, error_source) = resolve_error(&data.error, &raw.s)?;
    let input = InputEcho {
        path: data.input.display().to_string(),
        rows: raw.rows(),
        covariates: raw.covariates(),
    };
    let sample = ObservedSample::new(raw.s, raw.x, raw.y, error).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(Prepared {
        sample,
        input,
        error_source,
        estimator: estimator_config(&data.estimator),
        tuning: tuning_config(data.config.as_deref(), data.seed)?,
    })
}

fn smoothing_params(p: &Prepared, args: &ParamArgs) -> Result<(SmoothingParams, &'static str)> {
    match (args.k, args.h0, args.h) {
        (Some(k), Some(h0), Some(h)) => {
            let params = SmoothingParams::manual(k, h0, h).map_err(|e| CliError::Input(e.to_string()))?;
            Ok((params, "manual"))
        }
        (None, None, None) => {
            let params = parallel::two_step_tune(&p.sample, &p.estimator, &p.tuning, EstimatorVariant::Weighted)
                .map_err(CliError::tuning)?;
            Ok((params, "two_step"))
        }
        _ => Err(CliError::Input("--k, --h0 and --h must be given together".into())),
    }
}

fn grid(sample: &ObservedSample, args: &GridArgs) -> Result<(Vec<f64>, GridEcho)> {
    if args.grid_n < 2 {
        return Err(CliError::Input("--grid-n must be at least 2".into()));
    }
    let (g, quantiles) = match (args.grid_min, args.grid_max) {
        (Some(lo), Some(hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CliError::Input("--grid-min must be below --grid-max".into()));
            }
            (math::lin_space(lo, hi, args.grid_n), None)
        }
        _ => (default_grid(sample.s(), args.grid_n, DEFAULT_TRIM), Some(DEFAULT_TRIM)),
    };
    let echo = GridEcho {
        n: g.len(),
        min: g[0],
        max: g[g.len() - 1],
        from_sample_quantiles: quantiles,
    };
    Ok((g, echo))
}

fn provenance(
    command: &'static str,
    p: &Prepared,
    params: SmoothingParams,
    params_source: &'static str,
    grid: Option<GridEcho>,
) -> RunProvenance {
    RunProvenance {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        seed: p.tuning.simex.seed,
        input: p.input.clone(),
        error_source: p.error_source.clone(),
        error_model: ErrorModelDescriptor::from(p.sample.error()),
        estimator: p.estimator,
        tuning: p.tuning.clone(),
        params_source,
        params,
        grid,
    }
}

pub fn estimate(args: &EstimateArgs) -> Result<Vec<PathBuf>> {
    let p = prepare(&args.data)?;
    let (params, source) = smoothing_params(&p, &args.params)?;
    let (g, echo) = grid(&p.sample, &args.grid)?;
    let curve = mu_hat(&p.sample, &params, &p.estimator, &g).map_err(CliError::estimation)?;
    let prov = provenance("estimate", &p, params, source, Some(echo));
    let dir = &args.data.output_dir;
    io::ensure_dir(dir)?;
    let csv = out_path(dir, "curve.csv");
    io::write_csv(
        &csv,
        &["t", "mu", "skipped"],
        (0..curve.grid.len()).map(|i| {
            vec![
                fmt_f64(curve.grid[i]),
                fmt_f64(curve.mu[i]),
                u8::from(curve.is_skipped(i)).to_string(),
            ]
        }),
    )?;
    let json = out_path(dir, "curve.json");
    io::write_json(&json, &CurveFile { provenance: &prov, curve: &curve })?;
    Ok(vec![csv, json])
}

pub fn ci(args: &CiArgs) -> Result<Vec<PathBuf>> {
    if !(args.alpha >= ALPHA_RANGE.0 && args.alpha <= ALPHA_RANGE.1) {
        return Err(CliError::Input(format!(
            "invalid parameter: --alpha must lie in [{}, {}], got {}",
            ALPHA_RANGE.0, ALPHA_RANGE.1, args.alpha
        )));
    }
    let p = prepare(&args.data)?;
    let (params, source) = smoothing_params(&p, &args.params)?;
    let (g, echo) = grid(&p.sample, &args.grid)?;
    let band = ci_pointwise(&p.sample, &params, &p.estimator, &g, args.alpha).map_err(CliError::estimation)?;
    let prov = provenance("ci", &p, params, source, Some(echo));
    let warnings = band
        .degenerate
        .iter()
        .map(|&i| format!("DegenerateVariance at t = {}", fmt_f64(band.grid[i])))
        .collect();
    let dir = &args.data.output_dir;
    io::ensure_dir(dir)?;
    let csv = out_path(dir, "band.csv");
    io::write_csv(
        &csv,
        &["t", "mu", "lo", "hi"],
        (0..band.grid.len())
            .map(|i| vec![fmt_f64(band.grid[i]), fmt_f64(band.mu[i]), fmt_f64(band.lo[i]), fmt_f64(band.hi[i])]),
    )?;
    let json = out_path(dir, "band.json");
    io::write_json(
        &json,
        &BandFile {
            provenance: &prov,
            alpha: band.alpha,
            z: band.z,
            undersmooth_factor: band.undersmooth_factor,
            undersmoothed_params: &band.params,
            warnings,
            band: &band,
        },
    )?;
    Ok(vec![csv, json])
}

pub fn tune(args: &TuneArgs) -> Result<Vec<PathBuf>> {
    let p = prepare(&args.data)?;
    let params = parallel::two_step_tune(&p.sample, &p.estimator, &p.tuning, EstimatorVariant::Weighted)
        .map_err(CliError::tuning)?;
    let prov = provenance("tune", &p, params, "two_step", None);
    io::ensure_dir(&args.data.output_dir)?;
    let json = out_path(&args.data.output_dir, "params.json");
    io::write_json(&json, &ParamsFile { provenance: &prov })?;
    Ok(vec![json])
}

fn sim_error(e: ErrorKindArg) -> SimError {
    match e {
        ErrorKindArg::Laplace => SimError::Laplace,
        ErrorKindArg::Gaussian => SimError::Gaussian,
        ErrorKindArg::None => SimError::None,
    }
}

/// Resolves the study configuration: preset first, explicit flags on top.
pub fn simulate_config(args: &SimulateArgs) -> Result<MonteCarloConfig> {
    let mut cfg = match args.preset {
        Some(Preset::Fig1) => MonteCarloConfig::fig1(args.seed),
        None => MonteCarloConfig {
            models: vec![SimModel::Model1],
            sizes: vec![500],
            errors: vec![SimError::Laplace],
            reps: 200,
            seed: args.seed,
            study: Default::default(),
        },
    };
    if let Some(ids) = &args.models {
        cfg.models = ids
            .iter()
            .map(|&id| SimModel::from_id(id).map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<_>>()?;
    }
    if let Some(sizes) = &args.sizes {
        cfg.sizes = sizes.clone();
    }
    if let Some(errors) = &args.errors {
        cfg.errors = errors.iter().map(|&e| sim_error(e)).collect();
    }
    if let Some(labels) = &args.estimators {
        cfg.study.estimators = labels
            .iter()
            .map(|l| EstimatorLabel::parse(l).ok_or_else(|| CliError::Config(format!("unknown estimator '{l}'"))))
            .collect::<Result<_>>()?;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(n) = args.grid_n {
        cfg.study.grid_n = n;
    }
    cfg.study.estimator = estimator_config(&args.estimator);
    cfg.study.tuning = tuning_config(args.config.as_deref(), None)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let cfg = simulate_config(args)?;
    let (report, timing) = run_monte_carlo(&cfg)?;
    let dir = &args.output_dir;
    io::ensure_dir(dir)?;
    let json = out_path(dir, "report.json");
    io::write_json(&json, &report)?;
    let csv = out_path(dir, "ise.csv");
    io::write_csv(&csv, &ISE_HEADER, report.ise_rows())?;
    for s in &report.summaries {
        eprintln!(
            "model {} N {} {} {}: median ISE {} ({} of {} failed)",
            s.model.id(),
            s.n,
            s.error.as_str(),
            s.label.as_str(),
            fmt_f64(s.median),
            s.failures,
            s.reps
        );
    }
    eprintln!(
        "{} replications in {:.1} s on {} threads",
        timing.replications, timing.seconds, timing.threads
    );
    Ok(vec![json, csv])
}

pub fn replicate_phi(args: &ReplicatePhiArgs) -> Result<Vec<PathBuf>> {
    let pairs = io::read_pairs(&args.input)?;
    let model = estimate_cf_from_replicates(&pairs).map_err(|e| match e {
        adrf_core::Error::InsufficientReplicates { .. } | adrf_core::Error::InvalidSample(_) => {
            CliError::Input(e.to_string())
        }
        other => CliError::Config(other.to_string()),
    })?;
    let desc = ErrorModelDescriptor::from(&model);
    let table = desc.table.as_ref().expect("replicate models are tabulated");
    let dir = &args.output_dir;
    io::ensure_dir(dir)?;
    let csv = out_path(dir, "phi.csv");
    io::write_csv(
        &csv,
        &["w", "phi"],
        table
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| vec![fmt_f64(k as f64 * table.step), fmt_f64(*v)]),
    )?;
    let json = out_path(dir, "error_model.json");
    io::write_json(
        &json,
        &ErrorModelFile {
            format_version: FORMAT_VERSION,
            source: args.input.display().to_string(),
            pairs: pairs.len(),
            error_model: desc,
        },
    )?;
    Ok(vec![csv, json])
}

/// Quartiles per `(model, error, N, estimator)` cell of an `ise.csv` file.
pub fn report(args: &ReportArgs) -> Result<Vec<PathBuf>> {
    let mut rdr = csv::Reader::from_path(&args.input).map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column '{name}'", args.input.display())))
    };
    let (cm, ce, cn, ces, ci) = (col("model")?, col("error")?, col("N")?, col("estimator")?, col("ise")?);
    let mut cells: BTreeMap<(String, String, usize, String), (usize, Vec<f64>)> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("row {}: {e}", i + 1)))?;
        let n = rec[cn]
            .parse::<usize>()
            .map_err(|_| CliError::Input(format!("row {}, column 'N': '{}' is not a count", i + 1, &rec[cn])))?;
        let cell = cells
            .entry((rec[cm].to_owned(), rec[ce].to_owned(), n, rec[ces].to_owned()))
            .or_default();
        cell.0 += 1;
        if !rec[ci].is_empty() {
            let v = rec[ci]
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("row {}, column 'ise': '{}' is not a number", i + 1, &rec[ci])))?;
            cell.1.push(v);
        }
    }
    let rows: Vec<Vec<String>> = cells
        .into_iter()
        .map(|((model, error, n, est), (reps, values))| {
            let sorted = math::sorted_copy(&values);
            let q = |p: f64| if sorted.is_empty() { f64::NAN } else { math::quantile_sorted(&sorted, p) };
            let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
            vec![
                model,
                error,
                n.to_string(),
                est,
                reps.to_string(),
                (reps - values.len()).to_string(),
                fmt_f64(q(0.25)),
                fmt_f64(q(0.5)),
                fmt_f64(q(0.75)),
                fmt_f64(mean),
            ]
        })
        .collect();
    for r in &rows {
        println!("{}", r.join("\t"));
    }
    io::ensure_dir(&args.output_dir)?;
    let out = out_path(&args.output_dir, "summary.csv");
    io::write_csv(
        &out,
        &["model", "error", "N", "estimator", "reps", "failures", "q1", "median", "q3", "mean"],
        rows,
    )?;
    Ok(vec![out])
}
