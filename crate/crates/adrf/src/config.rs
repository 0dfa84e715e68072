//! SIMEX settings file and the error-model descriptor.

use std::path::Path;

use adrf_core::deconv_kernel::ErrorKind;
use adrf_core::math::log_space;
use adrf_core::{ErrorModel, SimexConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Flat TOML file of SIMEX settings. The bandwidth grid is
/// `h_grid_n` log-spaced multipliers of the plug-in bandwidth between
/// `h_grid_min` and `h_grid_max`.
///
/// ```toml
/// D = 35
/// h_grid_min = 0.2
/// h_grid_max = 5.0
/// h_grid_n = 40
/// trim_lo = 0.05
/// trim_hi = 0.95
/// seed = 7
/// b_grid = [0.05, 0.1, 0.2, 0.5]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimexFile {
    #[serde(rename = "D")]
    pub d: Option<usize>,
    pub h_grid_min: Option<f64>,
    pub h_grid_max: Option<f64>,
    pub h_grid_n: Option<usize>,
    pub trim_lo: Option<f64>,
    pub trim_hi: Option<f64>,
    pub seed: Option<u64>,
    pub b_grid: Option<Vec<f64>>,
}

const DEFAULT_H_GRID: (f64, f64, usize) = (0.2, 5.0, 40);

impl SimexFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Overlays the file on `base`.
    pub fn apply(&self, base: &SimexConfig) -> Result<SimexConfig> {
        let mut cfg = base.clone();
        if let Some(d) = self.d {
            cfg.d = d;
        }
        if self.h_grid_min.is_some() || self.h_grid_max.is_some() || self.h_grid_n.is_some() {
            let lo = self.h_grid_min.unwrap_or(DEFAULT_H_GRID.0);
            let hi = self.h_grid_max.unwrap_or(DEFAULT_H_GRID.1);
            let n = self.h_grid_n.unwrap_or(DEFAULT_H_GRID.2);
            if !(lo > 0.0 && hi > lo && n >= 2) {
                return Err(CliError::Config(
                    "h grid needs 0 < h_grid_min < h_grid_max and h_grid_n >= 2".into(),
                ));
            }
            cfg.h_grid = log_space(lo, hi, n);
        }
        cfg.trim = (self.trim_lo.unwrap_or(cfg.trim.0), self.trim_hi.unwrap_or(cfg.trim.1));
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(b) = &self.b_grid {
            cfg.b_grid = b.clone();
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Serializable form of an [`ErrorModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelDescriptor {
    pub kind: ErrorKind,
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<CfTableDescriptor>,
}

/// Tabulated characteristic function on `w = k * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfTableDescriptor {
    pub step: f64,
    pub values: Vec<f64>,
    pub floored_from: Option<f64>,
    /// Replicate differences `s1 - s2`, resampled by SIMEX.
    pub differences: Vec<f64>,
}

impl From<&ErrorModel> for ErrorModelDescriptor {
    fn from(m: &ErrorModel) -> Self {
        Self {
            kind: m.kind(),
            variance: m.variance(),
            table: m.cf_table().map(|t| CfTableDescriptor {
                step: t.step(),
                values: t.values().to_vec(),
                floored_from: t.floored_from(),
                differences: t.differences().to_vec(),
            }),
        }
    }
}

impl ErrorModelDescriptor {
    pub fn to_model(&self) -> Result<ErrorModel> {
        let m = match (self.kind, &self.table) {
            (ErrorKind::ReplicateEstimated, Some(t)) => {
                ErrorModel::from_table(t.step, t.values.clone(), t.floored_from, t.differences.clone())
            }
            (ErrorKind::ReplicateEstimated, None) => {
                return Err(CliError::Input("replicate-estimated error model without a table".into()))
            }
            (kind, _) => ErrorModel::parametric(kind, self.variance),
        };
        m.map_err(|e| CliError::Input(e.to_string()))
    }
}

/// The `error_model.json` file written by `replicate-phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelFile {
    pub format_version: u32,
    pub source: String,
    pub pairs: usize,
    pub error_model: ErrorModelDescriptor,
}
