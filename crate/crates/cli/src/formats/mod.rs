//! On-disk formats: P6 images, manifest CSVs, and feature sidecars.

pub mod manifest;
pub mod ppm;
pub mod sidecar;
