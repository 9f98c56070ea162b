//! CSV matrices and JSON sidecars.
//!
//! Matrices are written with a one-line header and 17 significant digits, so
//! a write/read round trip is exact. Count data is written as integers.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::model::{Dataset, Kernel, SimplexNest, Truth};

pub const DATASET_SIDECAR: &str = "dataset.json";
pub const OBSERVATIONS_FILE: &str = "X.csv";
pub const VERTICES_FILE: &str = "B.csv";
pub const WEIGHTS_FILE: &str = "theta.csv";

/// Writes `m` with header `{prefix}0,{prefix}1,...`. With `integer` set every
/// entry must be integral and is written without a fractional part.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, prefix: &str, integer: bool) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| DsnError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let mut line = header.join(",");
    line.push('\n');
    let mut text = line;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                text.push(',');
            }
            let v = m[(i, j)];
            if integer {
                if v.fract() != 0.0 || !v.is_finite() {
                    return Err(DsnError::param(format!(
                        "entry ({i}, {j}) = {v} is not an integer"
                    )));
                }
                text.push_str(&format!("{}", v as i64));
            } else {
                text.push_str(&format!("{v:.16e}"));
            }
        }
        text.push('\n');
        if text.len() > 1 << 16 {
            out.write_all(text.as_bytes())
                .map_err(|e| DsnError::io(path, e))?;
            text.clear();
        }
    }
    out.write_all(text.as_bytes())
        .map_err(|e| DsnError::io(path, e))?;
    out.flush().map_err(|e| DsnError::io(path, e))
}

/// Reads a headered CSV matrix.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| DsnError::io(path, e))?;
    let parse_err = |message: String| DsnError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| DsnError::io(path, e))?,
        None => return Err(parse_err("empty file".into())),
    };
    let cols = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| DsnError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("line {}: cannot parse {field:?}", lineno + 2)))?;
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(parse_err(format!(
                "line {}: expected {cols} fields, found {}",
                lineno + 2,
                values.len() - before
            )));
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| DsnError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DsnError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DsnError::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFiles {
    pub vertices: String,
    pub weights: String,
    pub alpha: Vec<f64>,
}

/// JSON sidecar stored next to `X.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kernel: Kernel,
    pub n: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthFiles>,
}

/// Writes `X.csv`, `dataset.json` and, when present, `B.csv` and `theta.csv`.
pub fn save_dataset(dir: &Path, data: &Dataset, seed: Option<u64>) -> Result<()> {
    ensure_dir(dir)?;
    let counts = data.kernel.is_count();
    write_matrix(
        &dir.join(OBSERVATIONS_FILE),
        &data.observations,
        "x",
        counts,
    )?;
    let truth = match &data.truth {
        Some(t) => {
            write_matrix(
                &dir.join(VERTICES_FILE),
                t.simplex.vertices(),
                "beta",
                false,
            )?;
            write_matrix(&dir.join(WEIGHTS_FILE), &t.weights, "theta", false)?;
            Some(TruthFiles {
                vertices: VERTICES_FILE.into(),
                weights: WEIGHTS_FILE.into(),
                alpha: t.simplex.alpha().to_vec(),
            })
        }
        None => None,
    };
    let meta = DatasetMeta {
        kernel: data.kernel,
        n: data.n(),
        dim: data.dim(),
        seed,
        truth,
    };
    write_json(&dir.join(DATASET_SIDECAR), &meta)
}

/// Loads a dataset directory. Ground truth is attached only when
/// `with_truth` is set.
pub fn load_dataset(dir: &Path, with_truth: bool) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join(DATASET_SIDECAR))?;
    meta.kernel.validate()?;
    let x_path = dir.join(OBSERVATIONS_FILE);
    let observations = read_matrix(&x_path)?;
    if observations.shape() != (meta.n, meta.dim) {
        return Err(DsnError::Parse {
            path: x_path,
            message: format!(
                "shape {:?} disagrees with sidecar ({}, {})",
                observations.shape(),
                meta.n,
                meta.dim
            ),
        });
    }
    let mut data = Dataset::new(observations, meta.kernel);
    if with_truth {
        if let Some(files) = &meta.truth {
            let vertices = read_matrix(&resolve(dir, &files.vertices))?;
            let weights = read_matrix(&resolve(dir, &files.weights))?;
            let simplex = SimplexNest::new(vertices, &files.alpha, meta.kernel)?;
            data.truth = Some(Truth { weights, simplex });
        }
    }
    Ok(data)
}

fn resolve(dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Reads the `D x K` vertex matrix of a fit directory, or a bare CSV file.
pub fn load_vertices(path: &Path) -> Result<DMatrix<f64>> {
    if path.is_dir() {
        read_matrix(&path.join("vertices.csv"))
    } else {
        read_matrix(path)
    }
}
