use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] grnlink_core::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use grnlink_core::Error as E;
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Core(e) => match e {
                E::NonFiniteLoss { .. } | E::NonFinite(_) | E::Metric(_) => EXIT_NUMERIC,
                E::Checkpoint(_) => EXIT_CHECKPOINT,
                _ => EXIT_INPUT,
            },
        }
    }
}

/// Attaches the offending path to I/O failures.
pub fn with_path<T>(path: &std::path::Path, r: grnlink_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        grnlink_core::Error::Io(io) => CliError::input(format!("{}: {io}", path.display())),
        other => CliError::Core(other),
    })
}
