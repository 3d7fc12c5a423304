use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix does not have the dimensions its layout requires.
    #[error("layout error: {0}")]
    Layout(String),
    /// Invalid configuration value or unknown name.
    #[error("configuration error: {0}")]
    Config(String),
    /// A value outside its mathematical domain (skill index, bin count, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// NaN or infinity where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Failure during optimisation, with enough context to replay it.
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Configuration-class errors map to a distinct process exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Checkpoint(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what}: component {i} is not finite ({})",
            values[i]
        )));
    }
    Ok(())
}
