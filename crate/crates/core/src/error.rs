use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or dimension is invalid for the requested operation.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data is unusable (e.g. non-finite components).
    #[error("input error: {0}")]
    Input(String),

    /// A loss evaluation produced a non-finite value.
    #[error("non-finite loss at step {step}{}: {detail}", agent_suffix(*.agent))]
    Numerical {
        step: usize,
        agent: Option<usize>,
        detail: String,
    },

    /// An iterate left the finite region or crossed the divergence guard.
    #[error("run diverged at step {step} (norm {norm})")]
    Divergence { step: usize, norm: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn agent_suffix(agent: Option<usize>) -> String {
    match agent {
        Some(i) => format!(" (agent {i})"),
        None => String::new(),
    }
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Numerical { .. } => "numerical",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
