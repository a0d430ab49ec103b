//! The test-suite manifest.
//!
//! One CSV row per source test case. The header decides the task:
//! `id,image,class` declares a classification suite (third column a
//! non-negative integer label), `id,image,annotations` a detection
//! suite (third column the path of a JSON file holding the ground-truth
//! boxes). Paths are resolved relative to the manifest's directory, ids
//! must be unique and non-empty, and every annotation file is parsed up
//! front so a campaign never starts against a broken suite.

use std::fs;
use std::path::{Path, PathBuf};

use morphic_core::relations::BoundingBox;
use morphic_core::sut::Task;
use morphic_core::verdicts::GroundTruth;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

impl ManifestError {
    fn invalid(path: &Path, reason: impl Into<String>) -> Self {
        ManifestError::Invalid {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// One source test case.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path, resolved against the manifest directory.
    pub image: PathBuf,
    /// Label for classification suites.
    pub class: Option<u32>,
    /// Ground-truth boxes for detection suites.
    pub truths: Option<Vec<GroundTruth>>,
}

/// A validated test suite.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub task: Task,
    pub entries: Vec<ManifestEntry>,
}

/// Loads and fully validates a manifest.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| map_csv(path, e))?;

    let headers = reader.headers().map_err(|e| map_csv(path, e))?.clone();
    let columns: Vec<&str> = headers.iter().collect();
    let task = match columns.as_slice() {
        ["id", "image", "class"] => Task::Classification,
        ["id", "image", "annotations"] => Task::Detection,
        other => {
            return Err(ManifestError::invalid(
                path,
                format!(
                    "header must be id,image,class or id,image,annotations, got {}",
                    other.join(",")
                ),
            ))
        }
    };

    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| map_csv(path, e))?;
        let line = row + 2; // 1-based, after the header
        if record.len() != 3 {
            return Err(ManifestError::invalid(
                path,
                format!("row {line}: expected 3 fields, got {}", record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(ManifestError::invalid(path, format!("row {line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(ManifestError::invalid(
                path,
                format!("row {line}: duplicate id {id:?}"),
            ));
        }
        if record[1].is_empty() {
            return Err(ManifestError::invalid(
                path,
                format!("row {line}: empty image path"),
            ));
        }
        let image = base.join(&record[1]);
        let entry = match task {
            Task::Classification => {
                let class = record[2].parse::<u32>().map_err(|_| {
                    ManifestError::invalid(
                        path,
                        format!("row {line}: class is not a non-negative integer: {:?}", &record[2]),
                    )
                })?;
                ManifestEntry {
                    id,
                    image,
                    class: Some(class),
                    truths: None,
                }
            }
            Task::Detection => {
                if record[2].is_empty() {
                    return Err(ManifestError::invalid(
                        path,
                        format!("row {line}: empty annotations path"),
                    ));
                }
                let ann_path = base.join(&record[2]);
                let truths = load_annotations(&ann_path)?;
                ManifestEntry {
                    id,
                    image,
                    class: None,
                    truths: Some(truths),
                }
            }
        };
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(ManifestError::invalid(path, "manifest lists no sources"));
    }
    Ok(Manifest { task, entries })
}

/// Parses one annotation file: a JSON array of ground-truth boxes.
fn load_annotations(path: &Path) -> Result<Vec<GroundTruth>, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let truths: Vec<GroundTruth> = serde_json::from_slice(&bytes)
        .map_err(|e| ManifestError::invalid(path, format!("annotation JSON: {e}")))?;
    // Derived deserialisation skips the constructor, so re-check the
    // box geometry here rather than let a bad suite in.
    for (i, t) in truths.iter().enumerate() {
        BoundingBox::new(t.bbox.x_min, t.bbox.y_min, t.bbox.x_max, t.bbox.y_max)
            .map_err(|e| ManifestError::invalid(path, format!("box {i}: {e}")))?;
    }
    Ok(truths)
}

fn map_csv(path: &Path, e: csv::Error) -> ManifestError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => ManifestError::Io {
                path: path.display().to_string(),
                source,
            },
            other => ManifestError::invalid(path, format!("{other:?}")),
        }
    } else {
        ManifestError::invalid(path, format!("{e}"))
    }
}
