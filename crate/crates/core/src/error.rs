use std::path::PathBuf;

use thiserror::Error;

/// A single rejected row from a record file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {} malformed row(s): {}", .rows.len(), join_rows(.rows))]
    Load { path: PathBuf, rows: Vec<RowError> },

    #[error("{path}: bad header, expected `{expected}`")]
    Header { path: PathBuf, expected: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("scaling estimation failed: {0}")]
    Scaling(String),

    #[error("series too small: {0}")]
    SeriesTooSmall(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("undefined power: increments have zero variance")]
    UndefinedPower,

    #[error("no absorbed replicates within {cap} generations")]
    NoAbsorption { cap: u64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("model file: {0}")]
    Model(String),

    #[error("no target verbs remain after filtering")]
    NoTargetVerbs,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

fn join_rows(rows: &[RowError]) -> String {
    rows.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// True for errors caused by bad flags or configuration rather than by
    /// the data.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Parameter(_) | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
