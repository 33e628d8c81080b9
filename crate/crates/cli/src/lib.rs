//! Operator commands around `adar-core`: dataset preparation, training,
//! evaluation, sweeps, the verification battery and embedding export.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_eval, cmd_export_embeddings, cmd_prepare, cmd_sweep, cmd_train, cmd_verify,
};
pub use config::ConfigFile;
pub use error::{CliError, CliResult, ErrorKind};
