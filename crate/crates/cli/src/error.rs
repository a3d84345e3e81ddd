use dpbo::bo::BoError;
use dpbo::data::DataError;
use dpbo::dp::DpError;
use dpbo::fitscore::FitError;
use dpbo::gp::GpError;
use dpbo::preprocess::PreprocessError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } | CliError::Json { .. } | CliError::Malformed(_) => EXIT_DATA,
            CliError::Data(DataError::InvalidScenario(_)) => EXIT_VALIDATION,
            CliError::Data(_) | CliError::Preprocess(_) => EXIT_DATA,
            CliError::Fit(FitError::InvalidGrid(_)) => EXIT_VALIDATION,
            CliError::Fit(_) => EXIT_DATA,
            CliError::Bo(BoError::Config(_)) => EXIT_VALIDATION,
            CliError::Bo(BoError::Gp(GpError::InvalidKernel(_))) => EXIT_VALIDATION,
            CliError::Bo(_) => EXIT_NUMERICAL,
            CliError::Dp(DpError::InvalidParams(_) | DpError::TraceMismatch { .. }) => {
                EXIT_VALIDATION
            }
            CliError::Dp(_) => EXIT_NUMERICAL,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
