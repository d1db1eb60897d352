use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(stocycle::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<stocycle::Error> for CliError {
    fn from(e: stocycle::Error) -> Self {
        use stocycle::Error as E;
        match e {
            E::UnknownModel(_)
            | E::MissingParam { .. }
            | E::NonSymmetricDiffusion(_)
            | E::NegativeDiffusionEigenvalue(_)
            | E::DimensionMismatch(_)
            | E::NonPositiveScale(_)
            | E::OutOfRange(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}
