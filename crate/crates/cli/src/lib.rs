//! Library side of the `gcnstab` command: resolved run configurations,
//! command execution and run manifests.
//!
//! A run is a command name plus a fully resolved configuration. Both the
//! normal invocation path and `--from-manifest` go through [`execute`], so a
//! re-run sees exactly the configuration the original run recorded.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use thiserror::Error;

pub use commands::{execute, RunOutput};
pub use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] gcnstab_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 usage or configuration, 2 verification failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(gcnstab_core::Error::Io { .. }) | CliError::Io { .. } => 3,
            CliError::Core(_) => 1,
            CliError::Verification(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
