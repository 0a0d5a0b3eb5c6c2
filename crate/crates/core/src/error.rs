use alloc::string::String;
use core::fmt;

use crate::fixed::FormatError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    DuplicateLayerId(u32),
    InvalidLayer {
        layer: u32,
        message: String,
    },
    WeightCount {
        layer: u32,
        tensor: &'static str,
        expected: usize,
        actual: usize,
    },
    ShapeInference {
        layer: u32,
        message: String,
    },
    /// A layer kind or configuration that the requested operation does not
    /// support.
    Unsupported {
        layer: Option<u32>,
        message: String,
    },
    ShapeMismatch {
        expected: usize,
        actual: usize,
    },
    Format(FormatError),
    InvalidDesignPoint(String),
    InvalidConfig {
        key: String,
        message: String,
    },
    EmptyDataset,
    AddressOutOfRange {
        address: u32,
        bound: u32,
    },
    RawOutOfRange {
        value: i64,
        bits: u32,
    },
    Busy,
    EmptyPipeline,
    MalformedPlan {
        line: usize,
        message: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DuplicateLayerId(id) => write!(f, "duplicate layer id {id}"),
            Error::InvalidLayer { layer, message } => write!(f, "layer {layer}: {message}"),
            Error::WeightCount {
                layer,
                tensor,
                expected,
                actual,
            } => write!(f, "layer {layer}: {tensor} has {actual} elements, expected {expected}"),
            Error::ShapeInference { layer, message } => {
                write!(f, "shape inference failed at layer {layer}: {message}")
            }
            Error::Unsupported {
                layer: Some(layer),
                message,
            } => write!(f, "unsupported configuration at layer {layer}: {message}"),
            Error::Unsupported { layer: None, message } => write!(f, "unsupported configuration: {message}"),
            Error::ShapeMismatch { expected, actual } => {
                write!(f, "input has {actual} elements, model expects {expected}")
            }
            Error::Format(e) => e.fmt(f),
            Error::InvalidDesignPoint(m) => write!(f, "invalid design point: {m}"),
            Error::InvalidConfig { key, message } => write!(f, "config key `{key}`: {message}"),
            Error::EmptyDataset => f.write_str("dataset is empty"),
            Error::AddressOutOfRange { address, bound } => {
                write!(f, "register address {address} out of range (map holds {bound} words)")
            }
            Error::RawOutOfRange { value, bits } => {
                write!(f, "raw word {value} does not fit in {bits} bits")
            }
            Error::Busy => f.write_str("pipeline busy: inference in progress"),
            Error::EmptyPipeline => f.write_str("graph has no layers to build a pipeline from"),
            Error::MalformedPlan { line, message } => {
                write!(f, "malformed stage description (line {line}): {message}")
            }
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Format(e) => Some(e),
            _ => None,
        }
    }
}

impl From<FormatError> for Error {
    fn from(e: FormatError) -> Self {
        Error::Format(e)
    }
}
