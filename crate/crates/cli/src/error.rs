use sa_core::CoreError;
use sa_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(CoreError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}", training_message(.0))]
    Training(CoreError),

    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Input(_) | CliError::Config(_) => 2,
            CliError::Training(_) => 3,
        }
    }

    /// Classifies an error raised while fitting: numerical blow-ups abort
    /// training, everything else is bad input.
    pub fn from_training(e: CoreError) -> Self {
        match e {
            CoreError::Training { .. } | CoreError::Numerics(NumericsError::NonFinite(_)) => CliError::Training(e),
            other => CliError::Input(other),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Input(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Training errors already say they aborted; numeric faults do not.
fn training_message(e: &CoreError) -> String {
    match e {
        CoreError::Training { .. } => e.to_string(),
        other => format!("training aborted: {other}"),
    }
}
