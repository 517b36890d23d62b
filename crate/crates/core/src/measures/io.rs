//! CSV / JSONL measure files.
//!
//! CSV: one atom per row, comma separated. An optional header row is detected
//! by its first field failing to parse as a number; a header whose last column
//! is named `weight` marks that column as the atom weights.
//!
//! JSONL: one object per line, `{"point": [..], "weight": w}` with `weight`
//! optional (all-or-none).
//!
//! Missing weights default to uniform. Given weights must be positive and sum
//! to within 1% of one; they are then renormalized to sum to one exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// On-disk measure encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureFormat {
    Csv,
    Jsonl,
}

impl MeasureFormat {
    /// Guesses the format from the file extension (`.jsonl`/`.ndjson` → JSONL, else CSV).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => {
                MeasureFormat::Jsonl
            }
            _ => MeasureFormat::Csv,
        }
    }
}

impl FromStr for MeasureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MeasureFormat::Csv),
            "jsonl" | "ndjson" => Ok(MeasureFormat::Jsonl),
            other => Err(Error::InvalidParameter(format!("unknown measure format `{other}`"))),
        }
    }
}

/// Relative tolerance on the weight sum before renormalization.
const WEIGHT_SUM_TOLERANCE: f64 = 0.01;

/// Reads a measure from `path`.
pub fn load_measure<T: Real>(path: &Path, format: MeasureFormat) -> Result<DiscreteMeasure<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (rows, weights) = match format {
        MeasureFormat::Csv => read_csv(path, file)?,
        MeasureFormat::Jsonl => read_jsonl(path, file)?,
    };
    assemble(path, rows, weights)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

type Rows = (Vec<Vec<f64>>, Option<Vec<f64>>);

fn read_csv(path: &Path, file: File) -> Result<Rows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    let mut weights: Option<Vec<f64>> = None;
    let mut weight_column = false;
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if idx == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            weight_column = record
                .iter()
                .next_back()
                .is_some_and(|f| f.eq_ignore_ascii_case("weight"));
            width = Some(record.len());
            continue;
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", width.unwrap_or(0), record.len()),
            ));
        }
        let mut values = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(path, line, format!("`{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if weight_column {
            let w = values.pop().ok_or_else(|| parse_err(path, line, "missing weight"))?;
            weights.get_or_insert_with(Vec::new).push(w);
        }
        rows.push(values);
    }
    Ok((rows, weights))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonAtom {
    point: Vec<f64>,
    #[serde(default)]
    weight: Option<f64>,
}

fn read_jsonl(path: &Path, file: File) -> Result<Rows> {
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut weighted = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let atom: JsonAtom =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        match (*weighted.get_or_insert(atom.weight.is_some()), atom.weight) {
            (true, Some(w)) => weights.push(w),
            (false, None) => {}
            _ => return Err(parse_err(path, line_no, "weights must be given for all atoms or none")),
        }
        if let Some(prev) = rows.first().map(Vec::len) {
            if prev != atom.point.len() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {prev} coordinates, found {}", atom.point.len()),
                ));
            }
        }
        rows.push(atom.point);
    }
    Ok((rows, weighted.unwrap_or(false).then_some(weights)))
}

fn assemble<T: Real>(path: &Path, rows: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<DiscreteMeasure<T>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(parse_err(path, 0, "no atoms found"));
    }
    let points = DMatrix::from_fn(n, d, |i, j| T::of(rows[i][j]));
    match weights {
        None => DiscreteMeasure::uniform(points),
        Some(w) => {
            if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidMeasure(format!("weight of atom {i} is {} (must be > 0)", w[i])));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::InvalidMeasure(format!(
                    "weights sum to {total}, not within {WEIGHT_SUM_TOLERANCE} of 1"
                )));
            }
            let weights = DVector::from_iterator(n, w.iter().map(|&v| T::of(v / total)));
            DiscreteMeasure::new(points, weights)
        }
    }
}

/// Writes `measure` to `path`. CSV files get an `x0,…,x{d-1}[,weight]` header.
///
/// Values use the shortest representation that parses back to the same float.
pub fn write_measure<T: Real>(
    measure: &DiscreteMeasure<T>,
    path: &Path,
    format: MeasureFormat,
    with_weights: bool,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let d = measure.dim();
    match format {
        MeasureFormat::Csv => {
            let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
            if with_weights {
                header.push("weight".into());
            }
            writeln!(out, "{}", header.join(",")).map_err(io)?;
            for i in 0..measure.len() {
                let mut fields: Vec<String> = measure.points().row(i).iter().map(|v| v.to_string()).collect();
                if with_weights {
                    fields.push(measure.weights()[i].to_string());
                }
                writeln!(out, "{}", fields.join(",")).map_err(io)?;
            }
        }
        MeasureFormat::Jsonl => {
            for i in 0..measure.len() {
                let point: Vec<f64> = measure.points().row(i).iter().map(|v| v.as_f64()).collect();
                let line = if with_weights {
                    serde_json::json!({ "point": point, "weight": measure.weights()[i].as_f64() })
                } else {
                    serde_json::json!({ "point": point })
                };
                writeln!(out, "{line}").map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}
