//! Error type shared by every module of the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by network construction, propagation, acquisition and
/// dataset transforms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    /// Consecutive layer specs do not chain (`output_dim` of layer `layer`
    /// differs from `input_dim` of the next).
    LayerChainMismatch {
        layer: usize,
        output_dim: usize,
        next_input_dim: usize,
    },
    /// A value that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// An index was outside the valid range.
    IndexOutOfRange { index: usize, len: usize },
    /// A configuration value violated its documented constraint.
    InvalidConfig(String),
    /// Training or statistics requested on an empty dataset.
    EmptyDataset,
    /// A label was not in `[0, classes)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Per-feature lower bound exceeds the upper bound.
    InvalidBounds { feature: usize },
    /// A feature cost was zero, negative, or non-finite.
    InvalidCost { feature: usize },
    /// A class in `[0, classes)` has no examples.
    ClassMissing { class: usize },
    /// Selection was requested while every feature is already known.
    NoUnknownFeatures,
    /// The same feature was acquired twice within one episode.
    RepeatAcquisition { feature: usize },
    /// An oracle failed to reveal a requested feature value.
    OracleFailure(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                actual,
            } => write!(f, "{what}: expected length {expected}, got {actual}"),
            Error::LayerChainMismatch {
                layer,
                output_dim,
                next_input_dim,
            } => write!(
                f,
                "layer {layer} outputs {output_dim} values but the next layer expects {next_input_dim}"
            ),
            Error::NonFinite(what) => write!(f, "{what} must be finite"),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside [0, {classes})")
            }
            Error::InvalidBounds { feature } => {
                write!(f, "feature {feature}: lower bound exceeds upper bound")
            }
            Error::InvalidCost { feature } => {
                write!(f, "feature {feature}: cost must be positive and finite")
            }
            Error::ClassMissing { class } => write!(f, "class {class} has no examples"),
            Error::NoUnknownFeatures => write!(f, "every feature is already known"),
            Error::RepeatAcquisition { feature } => {
                write!(f, "feature {feature} was already acquired")
            }
            Error::OracleFailure(msg) => write!(f, "oracle failure: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
