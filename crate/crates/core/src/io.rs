//! Dataset files, atomic writes and content digests.
//!
//! A dataset is a CSV with header `x0..x{d-1},y0..y{m-1}` holding scores in
//! their original orientation, plus a `<stem>.task.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{augment, Design, OfflineDataset, ScoreVector, Sense, TaskSpec};
use crate::error::{Error, Result};

/// Sidecar describing the task a dataset file belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSidecar {
    pub task_id: String,
    pub d: usize,
    pub m: usize,
    pub sense_original: Vec<Sense>,
    pub bounds: Vec<(f64, f64)>,
}

impl From<&TaskSpec> for TaskSidecar {
    fn from(spec: &TaskSpec) -> Self {
        TaskSidecar {
            task_id: spec.task_id.clone(),
            d: spec.d,
            m: spec.m,
            sense_original: spec.sense_original.clone(),
            bounds: spec.bounds.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::schema(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().unwrap_or_default().to_string_lossy();
    csv.with_file_name(format!("{stem}.task.json"))
}

pub fn csv_header(d: usize, m: usize) -> Vec<String> {
    (0..d)
        .map(|j| format!("x{j}"))
        .chain((0..m).map(|j| format!("y{j}")))
        .collect()
}

/// Serializes rows of `d + m` values; floats use shortest round-trip form.
pub fn rows_to_csv(d: usize, m: usize, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(d, m))?;
    for row in rows {
        if row.len() != d + m {
            return Err(Error::DimensionMismatch {
                expected: d + m,
                got: row.len(),
            });
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Writes a dataset CSV (original orientation) and its sidecar. Returns the
/// paths written.
pub fn write_dataset(path: &Path, sidecar: &TaskSidecar, rows: &[Vec<f64>]) -> Result<Vec<PathBuf>> {
    write_atomic(path, &rows_to_csv(sidecar.d, sidecar.m, rows)?)?;
    let side = sidecar_path(path);
    write_json(&side, sidecar)?;
    Ok(vec![path.to_path_buf(), side])
}

/// Original-orientation rows of a dataset.
pub fn dataset_rows(ds: &OfflineDataset) -> Vec<Vec<f64>> {
    ds.designs()
        .into_iter()
        .zip(ds.original_scores())
        .map(|(mut x, y)| {
            x.extend(y);
            x
        })
        .collect()
}

/// Reads raw rows and checks the header against the sidecar dimensions.
pub fn read_rows(path: &Path, d: usize, m: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::schema(path, format!("{other:?}")),
    })?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != csv_header(d, m) {
        return Err(Error::schema(
            path,
            format!("expected header {:?}, found {header:?}", csv_header(d, m).join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::schema(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Loads a dataset CSV with its sidecar into the internal (minimization)
/// orientation.
pub fn read_dataset(path: &Path) -> Result<(OfflineDataset, TaskSidecar)> {
    let side: TaskSidecar = read_json(&sidecar_path(path))?;
    if side.bounds.len() != side.d || side.sense_original.len() != side.m {
        return Err(Error::schema(sidecar_path(path), "bounds/sense lengths disagree with d/m"));
    }
    let rows = read_rows(path, side.d, side.m)?;
    let mut designs = Vec::with_capacity(rows.len());
    let mut scores = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let bad = |e: Error| Error::schema(path, format!("row {}: {e}", i + 1));
        scores.push(ScoreVector::new(row[side.d..].to_vec()).map_err(bad)?);
        designs.push(Design::new(row[..side.d].to_vec()).map_err(bad)?);
    }
    let ds = augment(&side.task_id, designs, scores, &side.sense_original)
        .map_err(|e| Error::schema(path, e.to_string()))?;
    Ok((ds, side))
}
