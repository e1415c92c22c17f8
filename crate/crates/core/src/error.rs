use std::path::PathBuf;

use crate::trajgen::GenerationResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("offset too small: feature {feature} of frame {frame} is {value} after offsetting")]
    OffsetInsufficient {
        frame: usize,
        feature: usize,
        value: f64,
    },

    #[error("gap of {len} samples in channel {channel} at sample {start} exceeds the {max} sample limit")]
    GapTooLong {
        channel: usize,
        start: usize,
        len: usize,
        max: usize,
    },

    #[error("degenerate palm pose at sample {sample}")]
    DegeneratePalmPose { sample: usize },

    #[error("invalid cutoff {cutoff_hz} Hz for sample rate {sample_rate_hz} Hz")]
    InvalidCutoff { cutoff_hz: f64, sample_rate_hz: f64 },

    #[error("rank {rank} must be smaller than the number of columns {columns}")]
    RankTooLarge { rank: usize, columns: usize },

    #[error("negative entry {value} at ({row}, {col})")]
    NonNegativityViolated { row: usize, col: usize, value: f64 },

    /// The velocity bounds keep the endpoints out of reach. `best` holds the
    /// velocity-feasible optimum that was found anyway.
    #[error(
        "velocity bounds are inconsistent with the requested endpoints: residual {residual:.6} \
         vs {unconstrained_residual:.6} without velocity bounds"
    )]
    Infeasible {
        residual: f64,
        unconstrained_residual: f64,
        best: Box<GenerationResult>,
    },

    #[error("script infeasible: {0}")]
    ScriptInfeasible(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Innermost error, looking through stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
