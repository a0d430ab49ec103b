//! Bit-exact replay checking: rerun a campaign from its config into a
//! scratch directory and byte-compare the artifact with a reference.
//!
//! Only the primary artifact (log or table) is compared; the timing
//! sidecar is wall-clock data and legitimately differs.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::campaign::{self, CampaignError};
use crate::config::{load_config, resolve, ConfigError, Mode, Overrides};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl ReplayError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ReplayError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn is_usage(&self) -> bool {
        match self {
            ReplayError::Config(_) | ReplayError::Invalid(_) => true,
            ReplayError::Campaign(e) => e.is_usage(),
            ReplayError::Io { .. } => false,
        }
    }
}

/// Outcome of a replay: either the bytes matched, or where they first
/// diverged.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub identical: bool,
    pub message: String,
}

/// Reruns the campaign described by `config_path` and compares its
/// artifact against `reference`. `table` says whether the reference is
/// a baseline table rather than a log.
pub fn replay(
    config_path: &Path,
    seed: Option<u64>,
    iterations: Option<u64>,
    reference: &Path,
    table: bool,
) -> Result<ReplayOutcome, ReplayError> {
    let expected = fs::read(reference).map_err(|e| ReplayError::io(reference, e))?;
    let config = load_config(config_path)?;
    let overrides = Overrides {
        seed,
        iterations,
        ..Overrides::default()
    };
    let mut resolved = resolve(&config, config_path, &overrides)?;
    match (table, resolved.mode) {
        (true, Mode::Baseline) | (false, Mode::Amt | Mode::Random | Mode::Boundary) => {}
        (true, mode) => {
            return Err(ReplayError::Invalid(format!(
                "--table given but the config runs {mode}, which writes a log"
            )));
        }
        (false, mode) => {
            return Err(ReplayError::Invalid(format!(
                "--log given but the config runs {mode}, which writes a table"
            )));
        }
    }

    let scratch = tempfile::tempdir().map_err(|e| ReplayError::io(Path::new("tempdir"), e))?;
    let artifact = scratch.path().join("artifact");
    if table {
        resolved.table_path = Some(artifact.clone());
    } else {
        resolved.log_path = Some(artifact.clone());
    }
    // Never clobber the original run's snapshot.
    resolved.snapshot_out = None;

    campaign::run(&resolved)?;
    let actual = fs::read(&artifact).map_err(|e| ReplayError::io(&artifact, e))?;
    Ok(diff(reference, &expected, &actual))
}

/// Byte-compares two artifacts, locating the first divergence by line
/// and byte offset.
fn diff(reference: &Path, expected: &[u8], actual: &[u8]) -> ReplayOutcome {
    let shared = expected
        .iter()
        .zip(actual.iter())
        .take_while(|(a, b)| a == b)
        .count();
    if shared == expected.len() && shared == actual.len() {
        return ReplayOutcome {
            identical: true,
            message: format!(
                "replay identical to {} ({} bytes)",
                reference.display(),
                expected.len()
            ),
        };
    }
    let line = expected[..shared].iter().filter(|&&b| b == b'\n').count() + 1;
    let message = if shared == expected.len() || shared == actual.len() {
        format!(
            "replay diverges at byte {shared} (line {line}): \
             reference has {} bytes, replay has {}",
            expected.len(),
            actual.len()
        )
    } else {
        format!(
            "replay diverges at byte {shared} (line {line}): \
             reference 0x{:02x}, replay 0x{:02x}",
            expected[shared], actual[shared]
        )
    };
    ReplayOutcome {
        identical: false,
        message,
    }
}


// Full-pipeline replay tests (run → replay → identical) live in
// tests/cli_campaigns.rs; they need a corpus on disk.
