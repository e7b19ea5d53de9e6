use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("degenerate vectors: {0}")]
    DegenerateVectors(&'static str),
    #[error("circular symmetry has no finite rotation group")]
    UnsupportedForFiniteGroup,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(&'static str),
    #[error("labels required")]
    LabelRequired,
    #[error("no points segmented as object")]
    SegmentationEmpty,
    #[error("category mismatch: predicted `{pred}`, ground truth `{gt}`")]
    CategoryMismatch { pred: String, gt: String },
    #[error("missing ground truth for ids: {}", .0.join(", "))]
    MissingGroundTruth(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateVectors(_) | Error::SegmentationEmpty | Error::State(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
