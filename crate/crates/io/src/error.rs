use std::path::{Path, PathBuf};

use psideal_core::PsError;
use thiserror::Error;

pub type Result<T, E = IoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Core(#[from] PsError),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.to_path_buf(), source }
    }

    pub(crate) fn image(path: &Path, source: image::ImageError) -> Self {
        IoError::Image { path: path.to_path_buf(), source }
    }

    pub(crate) fn parse(path: &Path, message: impl ToString) -> Self {
        IoError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }
}
