use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("views have different row counts ({left} vs {right}); use --id-col to join on an ID column")]
    RowMismatch { left: usize, right: usize },

    #[error("{}: non-numeric cell at row {row}, column {column} (`{name}`): {value:?}", path.display())]
    NonNumericCell {
        path: PathBuf,
        row: usize,
        column: usize,
        name: String,
        value: String,
    },

    #[error("{}: missing value at row {row}, column {column} (`{name}`); pass --impute-mean to fill it", path.display())]
    MissingCell {
        path: PathBuf,
        row: usize,
        column: usize,
        name: String,
    },

    #[error("no rows left after joining the views on their ID columns")]
    EmptyAfterJoin,

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] mvi_core::Error),
}

impl CliError {
    /// 2 for anything wrong with the inputs, 3 when the numerics fail.
    pub fn exit_code(&self) -> i32 {
        use mvi_core::Error as E;
        match self {
            Self::Core(
                E::NonFiniteInput { .. }
                | E::InvalidView(_)
                | E::InvalidParameter { .. }
                | E::DimensionMismatch { .. },
            ) => 2,
            Self::Core(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
