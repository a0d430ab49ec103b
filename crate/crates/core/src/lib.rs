//! Core of an adaptive metamorphic-testing engine.
//!
//! The crate provides the pieces needed to *learn* which metamorphic
//! relations (and which of their parameters) expose faults in a system
//! under test:
//!
//! - [`bandit`] — contextual bandits with explicit selection propensities
//!   and doubly-robust regression updates;
//! - [`hierarchy`] — a two-level arrangement of those bandits: one picks a
//!   relation, per-relation bandits pick a parameter;
//! - [`relations`] — the image transformations themselves (blur, flips,
//!   grayscale, invert, rotation, shear) plus bounding-box transport;
//! - [`verdicts`] — pass/violated decisions for classification and
//!   detection outputs, including IoU/AP/mAP scoring;
//! - [`features`] — the built-in 88-dimensional image context vector;
//! - [`oracle`] — a synthetic SUT whose violation behaviour is prescribed
//!   by a probability table, used to validate the learner end to end;
//! - [`sut`] — the request/response contract every SUT backend implements.
//!
//! Everything here is `no_std` + `alloc` and fully deterministic: all
//! randomness flows through seeded ChaCha streams ([`rng`]), all float
//! math goes through `libm`, and every stateful component can snapshot
//! itself to canonical bytes and resume exactly.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bandit;
pub mod context;
pub mod features;
pub mod hierarchy;
pub mod oracle;
pub mod relations;
pub mod rng;
pub mod sut;
pub mod verdicts;
