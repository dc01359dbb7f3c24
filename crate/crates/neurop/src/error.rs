use std::path::PathBuf;

use neurop_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("data: {0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(CoreError),
}

impl CliError {
    /// 0 ok, 2 config, 3 missing artifact, 4 data, 5 divergence, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Diverged(_) => 5,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFiniteGradient(_)
            | CoreError::NonFiniteLoss { .. }
            | CoreError::Diverged { .. }
            | CoreError::Unstable { .. }
            | CoreError::SampleRejected { .. } => CliError::Diverged(e.to_string()),
            CoreError::EmptyDataset(_) => CliError::Data(e.to_string()),
            CoreError::UnknownTask(_)
            | CoreError::MissingAdapter(_)
            | CoreError::DuplicateAdapter(_)
            | CoreError::ChannelMismatch { .. }
            | CoreError::ModesExceedNyquist { .. }
            | CoreError::KernelLength { .. }
            | CoreError::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
