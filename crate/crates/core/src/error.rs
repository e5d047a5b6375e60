use thiserror::Error;

pub type Result<T> = std::result::Result<T, DfError>;

#[derive(Debug, Error)]
pub enum DfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("singular design: smallest singular value {smallest:.3e} is below {tol:.1e} times the largest")]
    SingularDesign { smallest: f64, tol: f64 },

    #[error("degenerate criterion: {0}")]
    DegenerateCriterion(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("exhaustive search over {p} predictors exceeds the guard of {limit}; pass the override flag to force it")]
    SizeGuard { p: usize, limit: usize },

    #[error("replicate {replicate}, repetition {repetition}: {source}")]
    Replicate {
        replicate: usize,
        repetition: usize,
        #[source]
        source: Box<DfError>,
    },

    #[error("trace extractor returned a non-finite value ({0})")]
    InvalidExtractor(f64),

    #[error("degenerate GCV: nominal df {nominal:.3} is not below n = {n}; use a smaller nk")]
    DegenerateGcv { nominal: f64, n: usize },

    #[error("penalty correction undefined: design rank r = {0} (need r >= 2)")]
    DegenerateCorrection(usize),

    #[error("invalid fold: fold {fold} has {size} rows (need at least 2)")]
    InvalidFold { fold: usize, size: usize },

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DfError::InvalidInput(msg.into())
    }
}
