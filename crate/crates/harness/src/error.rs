use std::path::PathBuf;

/// Harness failures, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Core(#[from] deformseg::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_INPUT: i32 = 3;
    pub const EXIT_DIVERGENCE: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        use deformseg::Error as E;
        match self {
            HarnessError::Config(_) => Self::EXIT_CONFIG,
            HarnessError::Input(_) | HarnessError::Io { .. } => Self::EXIT_INPUT,
            HarnessError::Divergence(_) => Self::EXIT_DIVERGENCE,
            HarnessError::Core(e) => match e {
                E::NonFinite(_) => Self::EXIT_DIVERGENCE,
                E::InvalidArgument { .. } | E::Infeasible(_) => Self::EXIT_CONFIG,
                _ => Self::EXIT_INPUT,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
