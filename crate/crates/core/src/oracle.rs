//! Synthetic oracle SUT.
//!
//! The oracle decides *by prescription* whether a given
//! (source class, relation, parameter) combination violates, which makes
//! the whole engine testable: run a campaign against the oracle and the
//! empirical violation rates must reproduce the prescription.
//!
//! A specification maps each relation to a probability — a scalar, one
//! value per source class, or one value per 5° parameter step — or, in
//! *ramp* form, derives it from the angle as
//! `min(p_max, p0 + slope·|φ|)` (plain relations get `p0`). Two decision
//! modes:
//!
//! - `deterministic-hash`: violate iff a SHA-256 hash of
//!   (oracle seed, source id, relation, parameter), mapped to [0, 1),
//!   falls below the probability — the same request always answers the
//!   same;
//! - `bernoulli`: draw fresh from the oracle's random stream.
//!
//! On a violation the oracle answers a classification request with the
//! next label mod `class_count`, and a detection request with an empty
//! detection list; otherwise it echoes the expected answer (the class,
//! or the supplied truths at full confidence).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::relations::{param_grid, MrKind};
use crate::rng::{RngCheckpoint, SeededStream};
use crate::sut::{Sut, SutError, SutOutput, SutRequest, Task};
use crate::verdicts::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle specification: {0}")]
    Invalid(String),
    #[error("no table entry for {mr}")]
    MissingEntry { mr: MrKind },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: u32, classes: u32 },
    #[error("{mr} step {step} has no per-step probability")]
    MissingStep { mr: MrKind, step: usize },
    #[error("{mr} requires a parameter for per-step lookup")]
    MissingParam { mr: MrKind },
}

/// How the oracle turns a probability into a yes/no answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    #[serde(rename = "deterministic-hash", alias = "deterministic_hash")]
    DeterministicHash,
    #[serde(rename = "bernoulli")]
    Bernoulli,
}

/// Violation probability for one relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MrProbability {
    /// One probability for every source.
    Scalar(f64),
    /// Indexed by source class.
    PerClass { per_class: Vec<f64> },
    /// Indexed by parameter step: entry `s − 1` covers `|φ| = 5s`.
    PerStep { per_step: Vec<f64> },
}

/// Angle-ramp probabilities: `min(p_max, p0 + slope·|φ|)` for
/// parameterized relations, `p0` for the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    pub p0: f64,
    pub slope_per_degree: f64,
    pub p_max: f64,
}

/// Parsed oracle specification.
///
/// Exactly one of `table` and `ramp` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub class_count: u32,
    pub mode: OracleMode,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<BTreeMap<MrKind, MrProbability>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp: Option<RampSpec>,
}

fn check_probability(p: f64, what: &str) -> Result<(), OracleError> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(OracleError::Invalid(alloc::format!(
            "{what} must be a probability in [0, 1], got {p}"
        )))
    }
}

impl OracleSpec {
    /// Validates structure and ranges; call once after parsing.
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.class_count == 0 {
            return Err(OracleError::Invalid("class_count must be >= 1".into()));
        }
        match (&self.table, &self.ramp) {
            (Some(_), Some(_)) => {
                return Err(OracleError::Invalid(
                    "specify either a table or a ramp, not both".into(),
                ))
            }
            (None, None) => {
                return Err(OracleError::Invalid(
                    "one of table or ramp is required".into(),
                ))
            }
            (Some(table), None) => {
                for (mr, prob) in table {
                    match prob {
                        MrProbability::Scalar(p) => check_probability(*p, mr.name())?,
                        MrProbability::PerClass { per_class } => {
                            if per_class.len() != self.class_count as usize {
                                return Err(OracleError::Invalid(alloc::format!(
                                    "{mr}: per_class has {} entries for {} classes",
                                    per_class.len(),
                                    self.class_count
                                )));
                            }
                            for p in per_class {
                                check_probability(*p, mr.name())?;
                            }
                        }
                        MrProbability::PerStep { per_step } => {
                            let steps = match param_grid(*mr) {
                                Some(grid) => grid.len() / 2,
                                None => {
                                    return Err(OracleError::Invalid(alloc::format!(
                                        "{mr} takes no parameter, per_step is meaningless"
                                    )))
                                }
                            };
                            if per_step.len() != steps {
                                return Err(OracleError::Invalid(alloc::format!(
                                    "{mr}: per_step has {} entries, the grid has {steps} steps",
                                    per_step.len()
                                )));
                            }
                            for p in per_step {
                                check_probability(*p, mr.name())?;
                            }
                        }
                    }
                }
            }
            (None, Some(ramp)) => {
                check_probability(ramp.p0, "ramp p0")?;
                check_probability(ramp.p_max, "ramp p_max")?;
                if !ramp.slope_per_degree.is_finite() || ramp.slope_per_degree < 0.0 {
                    return Err(OracleError::Invalid(
                        "ramp slope_per_degree must be finite and >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether any table entry is resolved per source class.
    pub fn uses_per_class(&self) -> bool {
        self.table.as_ref().is_some_and(|t| {
            t.values()
                .any(|p| matches!(p, MrProbability::PerClass { .. }))
        })
    }

    /// Prescribed violation probability for one follow-up execution.
    ///
    /// Parameters are bucketed to their grid step (`s = |φ|/5`, nearest
    /// step for off-grid values).
    pub fn probability(
        &self,
        class: u32,
        mr: MrKind,
        param: Option<i32>,
    ) -> Result<f64, OracleError> {
        if class >= self.class_count {
            return Err(OracleError::ClassOutOfRange {
                class,
                classes: self.class_count,
            });
        }
        if let Some(ramp) = &self.ramp {
            return Ok(match param {
                Some(angle) => {
                    let p = ramp.p0 + ramp.slope_per_degree * angle.unsigned_abs() as f64;
                    if p > ramp.p_max {
                        ramp.p_max
                    } else {
                        p
                    }
                }
                None => ramp.p0,
            });
        }
        let table = self.table.as_ref().expect("validated: table or ramp");
        let prob = table.get(&mr).ok_or(OracleError::MissingEntry { mr })?;
        match prob {
            MrProbability::Scalar(p) => Ok(*p),
            MrProbability::PerClass { per_class } => Ok(per_class[class as usize]),
            MrProbability::PerStep { per_step } => {
                let angle = param.ok_or(OracleError::MissingParam { mr })?;
                // Bucket to the nearest 5° step, clamped onto the grid.
                let step = ((angle.unsigned_abs() + 2) / 5).max(1) as usize;
                let step = step.min(per_step.len());
                per_step
                    .get(step - 1)
                    .copied()
                    .ok_or(OracleError::MissingStep { mr, step })
            }
        }
    }
}

/// Uniform deviate in [0, 1) derived by hashing the request identity
/// with the oracle seed.
fn hash_unit(seed: u64, source_id: &str, mr: MrKind, param: Option<i32>) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(source_id.as_bytes());
    hasher.update([0u8]);
    hasher.update([mr.index() as u8]);
    match param {
        Some(p) => {
            hasher.update([1u8]);
            hasher.update(p.to_le_bytes());
        }
        None => hasher.update([0u8; 5]),
    }
    let digest = hasher.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    // Top 53 bits → exactly representable uniform deviate.
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Decides whether one follow-up execution violates, per the
/// specification. `rng` is only consulted in `bernoulli` mode.
pub fn oracle_violates(
    spec: &OracleSpec,
    rng: &mut SeededStream,
    source_id: &str,
    class: u32,
    mr: MrKind,
    param: Option<i32>,
) -> Result<bool, OracleError> {
    let p = spec.probability(class, mr, param)?;
    let u = match spec.mode {
        OracleMode::DeterministicHash => hash_unit(spec.seed, source_id, mr, param),
        OracleMode::Bernoulli => rand::Rng::random::<f64>(rng.rng()),
    };
    Ok(u < p)
}

/// The oracle as a [`Sut`] backend.
#[derive(Debug, Clone)]
pub struct OracleSut {
    spec: OracleSpec,
    rng: SeededStream,
}

/// Stream id for the oracle's Bernoulli draws.
const ORACLE_STREAM: u64 = 3;

impl OracleSut {
    pub fn new(spec: OracleSpec) -> Result<Self, OracleError> {
        spec.validate()?;
        let rng = SeededStream::new(spec.seed, ORACLE_STREAM);
        Ok(Self { spec, rng })
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    /// Position of the Bernoulli stream, for campaign snapshots.
    pub fn rng_checkpoint(&self) -> RngCheckpoint {
        self.rng.checkpoint()
    }

    /// Restores the Bernoulli stream position from a snapshot.
    pub fn restore_rng(&mut self, checkpoint: &RngCheckpoint) {
        self.rng = SeededStream::restore(checkpoint);
    }
}

impl Sut for OracleSut {
    fn execute(&mut self, request: &SutRequest<'_>) -> Result<SutOutput, SutError> {
        // Classification (and any per-class table) needs the true class;
        // a detection corpus without classes falls back to class 0.
        let class = match request.class_hint {
            Some(c) => c,
            None if request.task == Task::Detection && !self.spec.uses_per_class() => 0,
            None => {
                return Err(SutError::Config(
                    "oracle needs a class for every source".into(),
                ))
            }
        };
        if class >= self.spec.class_count {
            return Err(SutError::Config(alloc::format!(
                "class {class} out of range for {} classes",
                self.spec.class_count
            )));
        }
        let violated = match request.applied {
            // Source executions answer the reference output; only
            // follow-ups consult the prescription (and the stream).
            None => false,
            Some(applied) => oracle_violates(
                &self.spec,
                &mut self.rng,
                request.source_id,
                class,
                applied.mr,
                applied.param,
            )
            .map_err(|e| SutError::Config(alloc::format!("{e}")))?,
        };
        Ok(match request.task {
            Task::Classification => {
                if violated {
                    SutOutput::Label((class + 1) % self.spec.class_count)
                } else {
                    SutOutput::Label(class)
                }
            }
            Task::Detection => {
                if violated {
                    SutOutput::Detections(Vec::new())
                } else {
                    let truths = request.truths.unwrap_or(&[]);
                    SutOutput::Detections(
                        truths
                            .iter()
                            .map(|t| Detection {
                                bbox: t.bbox,
                                class_id: t.class_id,
                                score: 1.0,
                            })
                            .collect(),
                    )
                }
            }
        })
    }
}
