use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the recommendation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("interaction (user {user}, item {item}) out of range for {num_users} users x {num_items} items")]
    InteractionOutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },

    #[error("duplicate interaction (user {user}, item {item})")]
    DuplicateInteraction { user: usize, item: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose")]
    Asymmetric { row: usize, col: usize },

    #[error("invalid sparse matrix: {0}")]
    InvalidSparse(String),

    #[error("vertex {vertex} out of range for {num_vertices} vertices")]
    VertexOutOfRange { vertex: usize, num_vertices: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("user {0} has interacted with every item; no negative available")]
    NoNegative(usize),

    #[error("non-finite {component} loss: {value}")]
    NonFiniteLoss { component: &'static str, value: f64 },

    #[error("non-finite gradient in `{name}` ({count} entries) at step {step}")]
    NonFiniteGradient {
        name: String,
        count: usize,
        step: u64,
    },

    #[error("training split is empty")]
    EmptyTrainingSplit,

    #[error("no users with held-out items to evaluate")]
    NoEvaluableUsers,

    #[error("k = {k} exceeds the {available} rankable items")]
    KTooLarge { k: usize, available: usize },

    #[error("grid has {size} combinations, cap is {cap}")]
    GridTooLarge { size: usize, cap: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: file contains no interactions", .0.display())]
    EmptyInteractions(PathBuf),

    #[error("bad feature file header: {0}")]
    FeatureHeader(String),

    #[error("feature dimension mismatch: declared {declared}, file has {found}")]
    FeatureDim { declared: usize, found: usize },

    #[error("feature row count mismatch: vertex range covers {expected} rows, file has {found}")]
    FeatureRows { expected: usize, found: usize },

    #[error("truncated feature payload: expected {expected} bytes, found {found}")]
    TruncatedFeatures { expected: u64, found: u64 },

    #[error("bad parameter file: {0}")]
    ParamFile(String),

    #[error("dataset count mismatch for {what}: manifest declares {declared}, data has {found}")]
    CountMismatch {
        what: &'static str,
        declared: usize,
        found: usize,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
