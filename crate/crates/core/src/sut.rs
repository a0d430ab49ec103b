//! The system-under-test contract.
//!
//! A [`Sut`] answers one request at a time: given an image (and, for
//! detection, its ground truths), produce a label or a detection list.
//! The campaign drives the same interface for source and follow-up
//! executions; [`SutRequest::applied`] records which relation produced a
//! follow-up, which only the synthetic oracle consumes — a real backend
//! must never see anything a black box would not.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relations::{MrKind, RasterImage};
use crate::verdicts::{Detection, GroundTruth};

/// What kind of answer the SUT is expected to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Detection,
}

/// Which relation (and parameter) produced a follow-up input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedMr {
    pub mr: MrKind,
    pub param: Option<i32>,
}

/// One execution request.
#[derive(Debug, Clone)]
pub struct SutRequest<'a> {
    /// Identifier of the source test case this input derives from.
    pub source_id: &'a str,
    pub task: Task,
    pub image: &'a RasterImage,
    /// Ground truths accompanying the image (detection only; already
    /// transformed for follow-ups).
    pub truths: Option<&'a [GroundTruth]>,
    /// The source's class from the corpus manifest, when known.
    pub class_hint: Option<u32>,
    /// `None` for the untransformed source, `Some` for a follow-up.
    pub applied: Option<AppliedMr>,
}

/// One execution answer.
#[derive(Debug, Clone, PartialEq)]
pub enum SutOutput {
    Label(u32),
    Detections(Vec<Detection>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SutError {
    #[error("SUT timed out after {0} s")]
    Timeout(u64),
    #[error("SUT protocol violation: {0}")]
    Protocol(String),
    #[error("SUT I/O failure: {0}")]
    Io(String),
    #[error("SUT configuration invalid: {0}")]
    Config(String),
}

/// A system under test. Implementations must answer every request or
/// return an error; they must not block forever.
pub trait Sut {
    fn execute(&mut self, request: &SutRequest<'_>) -> Result<SutOutput, SutError>;
}
