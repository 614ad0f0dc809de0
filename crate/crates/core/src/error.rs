use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Runtime => "runtime",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("index {index} out of bounds for extent {extent}")]
    Bounds { index: usize, extent: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid phantom spec: {0}")]
    Spec(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("case {case_id}: {source}")]
    Case {
        case_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io {
            context: "i/o".into(),
            source,
        }
    }
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Attach a case id, unless one is already attached.
    pub fn for_case(self, case_id: &str) -> Self {
        match self {
            e @ Error::Case { .. } => e,
            other => Error::Case {
                case_id: case_id.to_string(),
                source: Box::new(other),
            },
        }
    }

    pub fn case_id(&self) -> Option<&str> {
        match self {
            Error::Case { case_id, .. } => Some(case_id),
            _ => None,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Contract(_) => ErrorKind::Config,
            Error::Schema(_)
            | Error::Bounds { .. }
            | Error::Format(_)
            | Error::Unsupported(_)
            | Error::Data(_)
            | Error::Shape(_)
            | Error::Aggregation(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Divergence(_) => ErrorKind::Runtime,
            Error::Io { source, .. } => match source.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData => ErrorKind::Data,
                _ => ErrorKind::Runtime,
            },
            Error::Case { source, .. } => source.kind(),
        }
    }
}

pub trait ResultExt<T> {
    fn for_case(self, case_id: &str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn for_case(self, case_id: &str) -> Result<T> {
        self.map_err(|e| e.for_case(case_id))
    }
}
