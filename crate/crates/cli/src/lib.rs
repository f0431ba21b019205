//! Data generation, solving, benchmarking and partition studies for the mmadmm solvers.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use config::{PartitionChoice, RunConfig};
pub use data::{generate, GenerateSpec, Manifest, ProblemKind};
pub use error::{CliError, CliResult};
