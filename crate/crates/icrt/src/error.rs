use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole crate.
///
/// Variants are grouped roughly by subsystem; the CLI maps `Config`-class
/// errors to exit code 2 and everything else to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid learning-rate schedule: {0}")]
    BadSchedule(String),

    #[error("rotation matrix is not orthonormal: max residual {0:.3e}")]
    NotARotation(f64),

    #[error("degenerate rot6d input {0:?}: {1}")]
    DegenerateRot6d([f64; 6], &'static str),

    #[error("scene placement failed after {attempts} rejection-sampling attempts")]
    PlacementFailed { attempts: usize },

    #[error("no object in scene matches descriptor {0}")]
    TargetNotFound(String),

    #[error("tier {tier} is not valid for primitive {primitive}")]
    BadTier { tier: u32, primitive: String },

    #[error("task group '{label}' has {count} trajectories, need at least 4")]
    GroupTooSmall { label: String, count: usize },

    #[error("trajectory {index} is unlabeled (task index {task} out of range)")]
    Unlabeled { index: usize, task: usize },

    #[error("group '{label}': shortest trajectory ({len} steps) exceeds L-1 = {max}")]
    TrajectoryTooLong { label: String, len: usize, max: usize },

    #[error("loss mask selects no steps")]
    EmptyLossMask,

    #[error("context overflow: need {needed} tokens, cache holds at most {max}; use fewer or shorter prompt trajectories")]
    ContextOverflow { needed: usize, max: usize },

    #[error("policy_step called before prompt_ingest")]
    NotPrompted,

    #[error("prompt demo seed {0} collides with an evaluation scene seed")]
    SeedCollision(u64),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training aborted at step {step}: {reason} (last good checkpoint retained)")]
    TrainAborted { step: usize, reason: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    /// Process exit code for the CLI: 2 for configuration errors, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
