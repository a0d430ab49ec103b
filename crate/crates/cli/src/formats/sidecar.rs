//! Precomputed context vectors ("sidecar" features).
//!
//! For suites whose features come from an external extractor, a CSV
//! file carries one vector per source: header `id,n=<dimension>`, each
//! row an id followed by exactly `n` finite decimal floats. The whole
//! file is validated when loaded — duplicate ids, short rows, and
//! non-finite values are all rejected before a campaign starts.

use std::collections::BTreeMap;
use std::path::Path;

use morphic_core::context::ContextVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

impl SidecarError {
    fn invalid(path: &Path, reason: impl Into<String>) -> Self {
        SidecarError::Invalid {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// A validated id → vector table of fixed dimension.
#[derive(Debug, Clone)]
pub struct SidecarFeatures {
    dim: usize,
    vectors: BTreeMap<String, ContextVector>,
}

impl SidecarFeatures {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&ContextVector> {
        self.vectors.get(id)
    }

    /// Checks that every listed id has a vector; run against the
    /// manifest before any campaign iteration.
    pub fn require_ids<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), String> {
        for id in ids {
            if !self.vectors.contains_key(id) {
                return Err(format!("sidecar has no vector for source {id:?}"));
            }
        }
        Ok(())
    }
}

/// Loads and fully validates a sidecar file.
pub fn load_sidecar(path: &Path) -> Result<SidecarFeatures, SidecarError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| map_csv(path, e))?;

    let headers = reader.headers().map_err(|e| map_csv(path, e))?.clone();
    let columns: Vec<&str> = headers.iter().collect();
    let dim = match columns.as_slice() {
        ["id", spec] => spec
            .strip_prefix("n=")
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&d| d > 0),
        _ => None,
    }
    .ok_or_else(|| {
        SidecarError::invalid(
            path,
            format!("header must be id,n=<positive dimension>, got {}", columns.join(",")),
        )
    })?;

    let mut vectors = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| map_csv(path, e))?;
        let line = row + 2;
        if record.len() != dim + 1 {
            return Err(SidecarError::invalid(
                path,
                format!("row {line}: expected {} fields, got {}", dim + 1, record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(SidecarError::invalid(path, format!("row {line}: empty id")));
        }
        let mut values = Vec::with_capacity(dim);
        for (i, field) in record.iter().skip(1).enumerate() {
            let v = field.parse::<f64>().map_err(|_| {
                SidecarError::invalid(
                    path,
                    format!("row {line}: value {} is not a float: {field:?}", i + 1),
                )
            })?;
            values.push(v);
        }
        let vector = ContextVector::new(values)
            .map_err(|e| SidecarError::invalid(path, format!("row {line}: {e}")))?;
        if vectors.insert(id.clone(), vector).is_some() {
            return Err(SidecarError::invalid(
                path,
                format!("row {line}: duplicate id {id:?}"),
            ));
        }
    }
    if vectors.is_empty() {
        return Err(SidecarError::invalid(path, "sidecar lists no vectors"));
    }
    Ok(SidecarFeatures { dim, vectors })
}

fn map_csv(path: &Path, e: csv::Error) -> SidecarError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => SidecarError::Io {
                path: path.display().to_string(),
                source,
            },
            other => SidecarError::invalid(path, format!("{other:?}")),
        }
    } else {
        SidecarError::invalid(path, format!("{e}"))
    }
}
