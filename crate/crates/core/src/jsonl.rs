//! JSONL persistence for datasets and logs.
//!
//! A dataset file starts with one header line `#meta {"name":..,"provenance":{..}}`
//! followed by one JSON object per record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::types::Dataset;

pub const META_PREFIX: &str = "#meta ";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
}

#[derive(Serialize, Deserialize)]
struct Meta {
    name: String,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Serialize a dataset to its JSONL text form.
pub fn dataset_to_string<T: Serialize>(d: &Dataset<T>) -> String {
    let meta = Meta { name: d.name.clone(), provenance: d.provenance.clone() };
    let mut s = String::new();
    s.push_str(META_PREFIX);
    s.push_str(&serde_json::to_string(&meta).expect("meta serializes"));
    s.push('\n');
    for rec in &d.samples {
        s.push_str(&serde_json::to_string(rec).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn write_dataset<T: Serialize>(path: &Path, d: &Dataset<T>) -> Result<(), DataError> {
    std::fs::write(path, dataset_to_string(d)).map_err(io_err(path))
}

/// Read a dataset; a missing header yields a dataset named after the file stem.
pub fn read_dataset<T: DeserializeOwned>(path: &Path) -> Result<Dataset<T>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut provenance = BTreeMap::new();
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let json_err = |source| DataError::Json { path: path.display().to_string(), line: i + 1, source };
        if let Some(meta) = line.strip_prefix(META_PREFIX) {
            let meta: Meta = serde_json::from_str(meta).map_err(json_err)?;
            name = meta.name;
            provenance = meta.provenance;
        } else if !line.trim().is_empty() {
            samples.push(serde_json::from_str(&line).map_err(json_err)?);
        }
    }
    Ok(Dataset { name, samples, provenance })
}

/// Write plain JSONL records (no header).
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| DataError::Io { path: path.display().to_string(), source: e.into() })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() || line.starts_with(META_PREFIX) {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|source| DataError::Json { path: path.display().to_string(), line: i + 1, source })?,
        );
    }
    Ok(out)
}
