use std::path::PathBuf;

use pwa_core::ErrorClass;

use crate::config::ConfigError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("missing required setting {0:?} (pass --{flag} or set it in the config file)", flag = .0.replace('_', "-"))]
    MissingKey(&'static str),
    #[error("{}: {source}", .path.display())]
    Core {
        path: PathBuf,
        #[source]
        source: pwa_core::Error,
    },
    #[error(transparent)]
    Pipeline(#[from] pwa_core::Error),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 success, 1 i/o, 2 usage, 3 data format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        let class = match self {
            CliError::Config(_) | CliError::MissingKey(_) => return 2,
            CliError::Io { .. } => return 1,
            CliError::Core { source, .. } | CliError::Pipeline(source) => source.class(),
        };
        match class {
            ErrorClass::Io => 1,
            ErrorClass::Usage => 2,
            ErrorClass::Format => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

/// Attaches a path to core errors raised while handling that file.
pub trait AtPath<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T>;
}

impl<T> AtPath<T> for pwa_core::Result<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            path: path.to_owned(),
            source,
        })
    }
}

impl<T> AtPath<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })
    }
}
