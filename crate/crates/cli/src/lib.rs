//! Command-line companion to `morphic-core`: file formats, campaign
//! configs, external SUT processes, the campaign runner, and the
//! reporting/replay tools behind the `morphic` binary.

pub mod campaign;
pub mod config;
pub mod external;
pub mod formats;
pub mod replay;
pub mod report;
