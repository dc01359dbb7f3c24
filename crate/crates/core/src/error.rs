use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },
    #[error("{op}: empty tensor")]
    EmptyTensor { op: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called on a tape that was already consumed")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),

    #[error("axis {axis}: {modes} retained modes need at least {} grid points, have {points}", 2 * modes)]
    ModesExceedNyquist {
        axis: usize,
        modes: usize,
        points: usize,
    },
    #[error("ssm kernel length {len} outside 1..={max}")]
    KernelLength { len: usize, max: usize },
    #[error("task `{task}`: expected {expected} input channels, got {found}")]
    ChannelMismatch {
        task: String,
        expected: usize,
        found: usize,
    },
    #[error("no adapter registered for task `{0}`")]
    MissingAdapter(String),
    #[error("adapter for task `{0}` already exists")]
    DuplicateAdapter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("{solver}: stability bound violated: {detail}")]
    Unstable { solver: &'static str, detail: String },
    #[error("{solver}: solution blew up ({detail})")]
    Diverged { solver: &'static str, detail: String },
    #[error("sample {index}: rejected after {attempts} attempts: {last}")]
    SampleRejected {
        index: usize,
        attempts: usize,
        last: String,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch} (last good epoch: {last_good:?})")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Option<usize>,
    },
    #[error("frozen core parameters changed during epoch {0}")]
    FrozenParameterChanged(usize),
    #[error("{0}: empty dataset split")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid_shape(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            reason: reason.into(),
        }
    }
}
