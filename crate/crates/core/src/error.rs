use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("sinkhorn produced non-finite dual potentials at epsilon = {epsilon}")]
    SinkhornNan { epsilon: f64 },

    #[error("encoder for modality {modality} maps sample {row} to a near-zero vector (norm {norm:e})")]
    DegenerateEncoder { modality: usize, row: usize, norm: f64 },

    #[error("non-finite {component} at training step {step}")]
    NonFiniteLoss { step: usize, component: &'static str },

    #[error("weights file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
