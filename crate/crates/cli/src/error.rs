//! Command failures and their process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A required artifact (config, dataset, checkpoint, run) is absent.
    #[error("missing artifact: {0}")]
    Missing(String),
    /// An artifact does not match the hash recorded for it.
    #[error("integrity check failed: {0}")]
    Integrity(String),
    /// Training diverged or a computation produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(swaphedge::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Integrity(_) => 5,
            CliError::Numerical(_) => 6,
            CliError::Io(_) => 7,
            CliError::Model(_) => 1,
        }
    }
}

impl From<swaphedge::Error> for CliError {
    fn from(e: swaphedge::Error) -> Self {
        use swaphedge::Error as E;
        match e {
            E::InvalidParameter { .. } | E::InvalidDate(_) | E::NotPositiveDefinite | E::Empty(_) => {
                CliError::Config(e.to_string())
            }
            E::Divergence(_) | E::NonFinite(_) | E::Singular(_) => CliError::Numerical(e.to_string()),
            E::Io(err) => CliError::Io(err.to_string()),
            other => CliError::Model(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Model(swaphedge::Error::Json(e))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let all = [
            CliError::Config(String::new()),
            CliError::Missing(String::new()),
            CliError::Integrity(String::new()),
            CliError::Numerical(String::new()),
            CliError::Io(String::new()),
            CliError::Model(swaphedge::Error::Format(String::new())),
        ];
        let mut codes: Vec<u8> = all.iter().map(|e| e.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
        assert!(!codes.contains(&0) && !codes.contains(&2));
    }

    #[test]
    fn model_errors_map_to_categories() {
        let e: CliError = swaphedge::Error::NonFinite("x".into()).into();
        assert_eq!(e.exit_code(), 6);
        let e: CliError = swaphedge::Error::InvalidDate("x".into()).into();
        assert_eq!(e.exit_code(), 3);
    }
}
