use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),

    #[error("tensor payload size mismatch: header declares {expected} elements, payload holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("label value {value} at element {index} is not 0 or 1")]
    InvalidLabel { index: usize, value: u8 },

    #[error("value {value} at element {index} outside {range}")]
    OutOfRange {
        index: usize,
        value: f64,
        range: &'static str,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("manifest parse error: {0}")]
    ManifestParse(#[from] serde_json::Error),

    #[error("method {method:?} not available for subject {subject:?}")]
    UnknownMethod { subject: String, method: String },

    #[error("global variance range for method {0:?} has not been computed")]
    MissingGlobalRange(String),

    #[error("binning schemes differ: {0} vs {1} bins")]
    BinMismatch(usize, usize),

    #[error("no voxels were binned")]
    EmptyBins,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
