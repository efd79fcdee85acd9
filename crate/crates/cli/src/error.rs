use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error(transparent)]
    Core(#[from] gradnoise::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// 0 success, 2 config error, 3 no viable learning rate, 4 insufficient
    /// data; anything else is 1.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Core(gradnoise::Error::NoViableLr { .. }) => 3,
            CliError::Core(gradnoise::Error::InsufficientData(_) | gradnoise::Error::InsufficientWindow { .. }) => 4,
            CliError::Core(gradnoise::Error::InvalidArgument(_)) => 2,
            _ => 1,
        })
    }
}
