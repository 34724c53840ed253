//! Command line front end for `bem-core`: configuration manifests, binary
//! dataset and checkpoint containers, CSV/PPM outputs, the `train`,
//! `compare` and `ablate` experiment drivers and the `selfcheck` battery.

pub mod app;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod output;
pub mod runs;
pub mod selfcheck;

pub use error::{CliError, CliResult};
