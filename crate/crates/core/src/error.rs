//! Crate-level error type and process exit codes.

use std::path::PathBuf;

use thiserror::Error;

use crate::attack::AttackError;
use crate::config::ConfigError;
use crate::datagen::DatagenError;
use crate::eval::EvalError;
use crate::io::IoError;
use crate::linalg::LinalgError;
use crate::manifold::ManifoldError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} needs {}, which does not exist; run the upstream stage first", path.display())]
    MissingDependency { stage: String, path: PathBuf },
    #[error("workdir {} is locked by another run ({})", path.display(), holder)]
    Locked { path: PathBuf, holder: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{context}: {source}")]
    File {
        context: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DEPENDENCY: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        use exit_code::*;
        match self {
            Error::Config(_) => CONFIG,
            Error::MissingDependency { .. } | Error::Locked { .. } => DEPENDENCY,
            Error::Nn(NnError::TrainingDiverged { .. } | NnError::NonFinite) => NUMERIC,
            Error::Attack(AttackError::NonFiniteGradient { .. }) => NUMERIC,
            Error::Attack(AttackError::Nn(NnError::NonFinite)) => NUMERIC,
            Error::Linalg(LinalgError::NonFinite) => NUMERIC,
            _ => OTHER,
        }
    }

    pub(crate) fn file(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::File {
            context: context.into(),
            source,
        }
    }
}
