use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid label {value} at voxel {index}")]
    InvalidLabel { index: usize, value: u8 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid phantom spec: {0}")]
    SpecInvalid(String),
    #[error("slice {z} out of range (num_slices = {num_slices})")]
    OutOfRange { z: usize, num_slices: usize },
    #[error("non-finite activation after {stage}")]
    NonFiniteActivation { stage: String },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("parameter manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("seed point ({x}, {y}) has HU {value} outside the threshold window")]
    SeedOutOfWindow { x: usize, y: usize, value: i16 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
