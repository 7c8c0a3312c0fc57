use thiserror::Error;

/// Errors produced anywhere in the estimation and testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid transformation code {code} for series `{series}` (expected 1..=7)")]
    InvalidTransformCode { series: String, code: i64 },

    #[error("insufficient data: need at least {required}, got {actual} ({context})")]
    InsufficientData {
        required: usize,
        actual: usize,
        context: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unbalanced panel: series `{series}` has a missing or non-finite value at `{period}`")]
    UnbalancedPanel { series: String, period: String },

    #[error("degenerate series `{0}`: zero variance")]
    DegenerateSeries(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("bandwidth {bandwidth} must be smaller than the sample length {len}")]
    Bandwidth { bandwidth: usize, len: usize },

    #[error("bootstrap unstable: {skipped} of {total} replicates failed")]
    BootstrapUnstable { skipped: usize, total: usize },

    #[error("category mapping error: {0}")]
    Mapping(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Parse { .. } => "ParseError",
            Error::InvalidTransformCode { .. } => "InvalidTransformCode",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::Domain(_) => "DomainError",
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::DegenerateSeries(_) => "DegenerateSeries",
            Error::Shape(_) => "ShapeError",
            Error::Numerical(_) => "NumericalError",
            Error::RankDeficient(_) => "RankDeficient",
            Error::Bandwidth { .. } => "BandwidthError",
            Error::BootstrapUnstable { .. } => "BootstrapUnstable",
            Error::Mapping(_) => "MappingError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }

    /// True for failures caused by the data or the numerics rather than by
    /// how the caller configured the run.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Numerical(_)
                | Error::RankDeficient(_)
                | Error::BootstrapUnstable { .. }
                | Error::DegenerateSeries(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(context()))
    }
}
