//! Process-level error taxonomy.
//!
//! Every failure is folded into one of three buckets with a fixed exit code,
//! so scripts can tell a bad config (2) from a flaky endpoint (3) from a
//! numerically degenerate run (4) without parsing messages.

use paneval::datapipe::DataError;
use paneval::embed::EmbedError;
use paneval::metrics::MetricsError;
use paneval::model::ModelError;
use paneval::model_file::FormatError;
use paneval::store::StoreError;
use paneval::synth::SynthError;
use paneval::train::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config, or input files. Exit code 2.
    Config(String),
    /// The embedding endpoint failed after the client gave it every chance.
    /// Exit code 3.
    Network(String),
    /// The numbers went bad: non-finite loss, degenerate statistics. Exit
    /// code 4.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Network(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Network(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(err: EmbedError) -> Self {
        match err {
            EmbedError::Http { .. }
            | EmbedError::ExhaustedRetries { .. }
            | EmbedError::BadResponse { .. } => CliError::Network(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(err: MetricsError) -> Self {
        match err {
            MetricsError::ZeroVariance { .. } => CliError::Numeric(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

macro_rules! config_error {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Config(err.to_string())
            }
        })*
    };
}

config_error!(
    DataError,
    StoreError,
    FormatError,
    ModelError,
    SynthError,
    std::io::Error,
    serde_json::Error,
);
