//! Context vectors: the per-source feature input shared by every bandit
//! level.
//!
//! A [`ContextVector`] is a fixed-length list of finite `f64`s. Finiteness
//! is enforced at construction so the learners never have to re-check it
//! on the hot path.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("context value at index {0} is not finite")]
    NonFinite(usize),
    #[error("context must not be empty")]
    Empty,
}

/// Fixed-length real feature vector describing one source test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextVector(Vec<f64>);

impl ContextVector {
    /// Wraps `values`, rejecting NaN/inf entries and empty vectors.
    pub fn new(values: Vec<f64>) -> Result<Self, ContextError> {
        if values.is_empty() {
            return Err(ContextError::Empty);
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ContextError::NonFinite(i));
            }
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}
