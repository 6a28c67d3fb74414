use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("dtype error: {0}")]
    Dtype(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("capture error: {0}")]
    Capture(String),
    #[error("shape error at node {node}: {reason}")]
    NodeShape { node: usize, reason: String },
    #[error("expected a 3-channel image, got {0} channels")]
    Channel(usize),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },
    #[error("malformed tensor file: {0}")]
    Format(String),
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;
