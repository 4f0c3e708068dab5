//! Error type shared across the crate.

use alloc::string::String;

/// Errors produced by tensor ops, the DSP front end, model construction,
/// and the prototype store.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// Operand shapes are incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// An argument violates a precondition (bad config value, empty set, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A class label lies outside `[0, classes)`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    /// Mutation was attempted on a frozen model.
    #[error("model is frozen")]
    Frozen,
    /// A class id collided with one already present in the store.
    #[error("class {0} already present in prototype store")]
    DuplicateClass(u32),
    /// A clip is shorter than one analysis frame.
    #[error("clip too short: {samples} samples, need at least {needed}")]
    ClipTooShort { samples: usize, needed: usize },
    /// A lookup key was not present.
    #[error("not found: {0}")]
    NotFound(String),
    /// A serialized blob failed structural or checksum validation.
    #[error("corrupt data: {0}")]
    Corrupt(&'static str),
    /// A serialized blob has an unsupported format version.
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn shape(msg: impl core::fmt::Display) -> Self {
        CoreError::ShapeMismatch(alloc::format!("{msg}"))
    }

    pub(crate) fn invalid(msg: impl core::fmt::Display) -> Self {
        CoreError::InvalidInput(alloc::format!("{msg}"))
    }
}
