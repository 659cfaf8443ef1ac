use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operator of dimension {dim} exceeds the dense cap {cap}")]
    Capacity { dim: usize, cap: usize },

    /// The shift sits on (or numerically on) an eigenvalue.
    #[error("near-singular pivot {pivot:e} at shift {shift} (threshold {threshold:e})")]
    NearSingular { shift: f64, pivot: f64, threshold: f64 },

    #[error("window holds {found} eigenvalues, more than the cap {cap}")]
    WindowOverflow { found: usize, cap: usize },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no crossing found in [{t_min}, {t_max}]")]
    NoCrossing { t_min: f64, t_max: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, ctx: impl Into<String>) -> Self {
        Error::Context { context: ctx.into(), source: Box::new(self) }
    }

    /// Strips any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub trait ResultExt<T> {
    fn context(self, ctx: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, ctx: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(ctx))
    }
}
