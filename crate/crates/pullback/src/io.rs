//! Dataset CSV files with metadata sidecars, generic CSV tables and output
//! path resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pullback_core::datagen::Dataset;
use pullback_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "pullback-dataset/1";
/// Environment variable naming the default directory for relative outputs.
pub const OUT_DIR_ENV: &str = "PULLBACK_OUT_DIR";

/// Joins a relative output path onto `$PULLBACK_OUT_DIR` (if set) and
/// creates the parent directory.
pub fn output_path(path: &Path) -> Result<PathBuf> {
    let full = match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    };
    if let Some(parent) = full.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(full)
}

/// Sidecar path of a dataset file: `<file>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    schema: String,
    name: String,
    seed: u64,
    n: usize,
    d: usize,
    params: BTreeMap<String, String>,
}

/// Shortest decimal that parses back to the same `f64`, in exponent form for
/// very small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Writes a CSV file with the given header.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::malformed(path, format!("{other:?}")),
    }
}

/// Header `x1,…,xd`.
pub fn point_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Writes `data` as CSV with header `x1,…,xd`.
pub fn write_points(path: &Path, data: &Tensor) -> Result<()> {
    let rows = (0..data.rows()).map(|r| data.row_slice(r).iter().map(|&v| fmt_f64(v)).collect());
    write_csv(path, &point_header(data.cols()), rows)
}

/// Reads a point CSV with header `x1,…,xd`.
pub fn read_points(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let d = header.len();
    if d == 0 || header.iter().ne(point_header(d).iter().map(String::as_str)) {
        return Err(Error::malformed(path, "expected header x1,…,xd"));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::malformed(path, format!("row {}: {field:?} is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(Error::malformed(path, format!("row {}: non-finite value", i + 1)));
            }
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::malformed(path, "no data rows"));
    }
    Ok(Tensor::matrix(n, d, data)?)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_points(path, &ds.samples)?;
    let side = Sidecar {
        schema: DATASET_SCHEMA.into(),
        name: ds.name.clone(),
        seed: ds.seed,
        n: ds.n(),
        d: ds.dim(),
        params: ds.params.iter().cloned().collect(),
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    std::fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))
}

/// Reads a dataset; without a sidecar the name is `"unknown"` and the seed 0.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let samples = read_points(path)?;
    let sp = sidecar_path(path);
    if !sp.exists() {
        return Ok(Dataset {
            name: "unknown".into(),
            params: Vec::new(),
            seed: 0,
            samples,
        });
    }
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::malformed(&sp, e))?;
    check_schema(&sp, &value, DATASET_SCHEMA)?;
    let side: Sidecar = serde_json::from_value(value).map_err(|e| Error::Schema {
        path: sp.clone(),
        expected: DATASET_SCHEMA,
        found: e.to_string(),
    })?;
    if side.n != samples.rows() || side.d != samples.cols() {
        return Err(Error::malformed(
            path,
            format!(
                "sidecar declares {}×{}, file holds {}×{}",
                side.n,
                side.d,
                samples.rows(),
                samples.cols()
            ),
        ));
    }
    Ok(Dataset {
        name: side.name,
        params: side.params.into_iter().collect(),
        seed: side.seed,
        samples,
    })
}

/// Fails unless `value.schema == expected`.
pub fn check_schema(path: &Path, value: &serde_json::Value, expected: &'static str) -> Result<()> {
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(s) if s == expected => Ok(()),
        other => Err(Error::Schema {
            path: path.to_path_buf(),
            expected,
            found: other.unwrap_or("<missing>").to_string(),
        }),
    }
}

/// Parses `"1.5,-2,3e-1"`.
pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t
                .trim()
                .parse()
                .map_err(|_| Error::usage(format!("{t:?} is not a number in point {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::usage(format!("non-finite coordinate in {s:?}")))
            }
        })
        .collect()
}

pub fn format_point(p: &[f64]) -> String {
    p.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}
