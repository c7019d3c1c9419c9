use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("non-finite input to {op}")]
    NonFinite { op: &'static str },

    #[error("backward root must hold exactly one element, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mask leaves no visible token")]
    NoVisibleToken,

    #[error("masked set is empty")]
    EmptyMask,

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error(
        "non-finite loss at step {step}: stat={stat} eng={eng} phase={phase} total={total}"
    )]
    NonFiniteLoss {
        step: usize,
        stat: f64,
        eng: f64,
        phase: f64,
        total: f64,
    },

    #[error("bad tensor file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
