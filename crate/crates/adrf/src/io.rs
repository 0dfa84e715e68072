//! CSV and JSON files read and written by the command-line tool.
//!
//! Sample files carry a header row with `s`, `y` and covariates
//! `x1, x2, ..., xr` in any column order. Replicate files carry `s1, s2`.

use std::fs;
use std::io::Write;
use std::path::Path;

use adrf_core::Matrix;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Columns of a sample file, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Matrix,
}

impl SampleData {
    pub fn rows(&self) -> usize {
        self.s.len()
    }

    pub fn covariates(&self) -> usize {
        self.x.cols()
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn headers(rdr: &mut csv::Reader<fs::File>, path: &Path) -> Result<Vec<String>> {
    let h = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: unreadable header: {e}", path.display())))?;
    Ok(h.iter().map(str::to_owned).collect())
}

fn find(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("{}: missing column '{name}'", path.display())))
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Input(format!(
            "row {row}, column '{column}': '{raw}' is not a finite number"
        ))),
    }
}

/// Reads every record, mapping CSV structure errors to row-numbered input
/// errors. Rows are numbered from 1 for the first record after the header.
fn records(rdr: &mut csv::Reader<fs::File>) -> Result<Vec<csv::StringRecord>> {
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                CliError::Input(format!("row {row}: expected {expected_len} fields, found {len}"))
            }
            _ => CliError::Input(format!("row {row}: {e}")),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a sample file.
pub fn read_sample(path: &Path) -> Result<SampleData> {
    let mut rdr = reader(path)?;
    let headers = headers(&mut rdr, path)?;
    let s_col = find(&headers, "s", path)?;
    let y_col = find(&headers, "y", path)?;
    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        if c == s_col || c == y_col {
            continue;
        }
        let index = h
            .strip_prefix('x')
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&j| j >= 1)
            .ok_or_else(|| CliError::Input(format!("{}: unexpected column '{h}'", path.display())))?;
        x_cols.push((index, c));
    }
    x_cols.sort_unstable();
    if x_cols.is_empty() {
        return Err(CliError::Input(format!("{}: missing column 'x1'", path.display())));
    }
    for (want, &(got, _)) in (1..).zip(&x_cols) {
        if got != want {
            return Err(CliError::Input(format!("{}: missing column 'x{want}'", path.display())));
        }
    }
    let records = records(&mut rdr)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let r = x_cols.len();
    let mut s = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    let mut x = Vec::with_capacity(records.len() * r);
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        s.push(parse_cell(&rec[s_col], row, "s")?);
        y.push(parse_cell(&rec[y_col], row, "y")?);
        for &(j, c) in &x_cols {
            x.push(parse_cell(&rec[c], row, &format!("x{j}"))?);
        }
    }
    let x = Matrix::from_row_major(records.len(), r, x);
    Ok(SampleData { s, y, x })
}

/// Reads replicate measurements `(s1, s2)`.
pub fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = reader(path)?;
    let headers = headers(&mut rdr, path)?;
    let a = find(&headers, "s1", path)?;
    let b = find(&headers, "s2", path)?;
    records(&mut rdr)?
        .iter()
        .enumerate()
        .map(|(i, rec)| Ok((parse_cell(&rec[a], i + 1, "s1")?, parse_cell(&rec[b], i + 1, "s2")?)))
        .collect()
}

/// Shortest round-trip decimal form; `NaN` for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_owned()
    } else {
        format!("{v}")
    }
}

/// Writes a CSV file with the given header.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Input(format!("{}: {other:?}", path.display())),
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
