use std::path::PathBuf;

/// Errors from file formats and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot parse {}: {msg}", .path.display())]
    MetaParseError { path: PathBuf, msg: String },
    #[error("{}: expected {expected} bytes, found {found}", .path.display())]
    SizeMismatch { path: PathBuf, expected: u64, found: u64 },
    #[error("{}: invalid label {value} at voxel {index}", .path.display())]
    InvalidLabel { path: PathBuf, index: usize, value: u8 },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    CheckFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] transonet_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path)
            } else {
                Error::Io { path, source }
            }
        }
    }

    /// True for problems with the user's input rather than the run itself.
    pub fn is_validation(&self) -> bool {
        use transonet_core::Error as C;
        match self {
            Error::InvalidArgument(_) => true,
            Error::Core(e) => matches!(
                e,
                C::InvalidConfig(_)
                    | C::SpecInvalid(_)
                    | C::SeedOutOfWindow { .. }
                    | C::DimensionMismatch(_)
                    | C::SizeMismatch(_)
            ),
            _ => false,
        }
    }
}
