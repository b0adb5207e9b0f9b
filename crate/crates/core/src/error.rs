use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GtmpError {
    #[error("format error: {0}")]
    Format(String),
    #[error("tree has more than one root: {0:?}")]
    MultiRoot(Vec<i64>),
    #[error("parent links form a cycle through node {0}")]
    Cycle(i64),
    #[error("edge {parent} -> {child} has length {length:e}, below the minimum edge length")]
    DegenerateEdge { parent: i64, child: i64, length: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid rigid transform: {0}")]
    Transform(String),
    #[error("anchor points are collinear: {0}")]
    Collinear(String),
    #[error("features admit no consistent placement: {0}")]
    Infeasible(String),
    #[error("cannot place nodes {0:?} from the known set")]
    UnreachableNode(Vec<i64>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("io error: {0}")]
    Io(String),
}

impl GtmpError {
    /// True for the failures that come from arithmetic rather than from bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            GtmpError::Numeric(_)
                | GtmpError::Collinear(_)
                | GtmpError::Infeasible(_)
                | GtmpError::UnreachableNode(_)
                | GtmpError::Shape(_)
        )
    }
}

impl From<std::io::Error> for GtmpError {
    fn from(e: std::io::Error) -> Self {
        GtmpError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GtmpError {
    fn from(e: serde_json::Error) -> Self {
        GtmpError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GtmpError>;
