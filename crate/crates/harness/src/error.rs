use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dum_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run directory is locked: {0}")]
    Locked(String),
}

impl HarnessError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, HarnessError::Core(dum_core::Error::Divergence(_)))
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;
