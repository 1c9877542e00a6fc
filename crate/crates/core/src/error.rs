use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("trainable parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("every position of sequence {0} is masked")]
    AllMasked(usize),

    #[error("malformed InChIKey `{0}`")]
    MalformedInchiKey(String),

    #[error("fewer than 2 distinct scaffolds ({0} found)")]
    TooFewScaffolds(usize),

    #[error("spectrum has no peaks")]
    EmptyPeaks,

    #[error("negative m/z {0}")]
    NegativeMass(f64),

    #[error("empty SMILES string")]
    EmptySmiles,

    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("insufficient candidate pool: need {needed} distinct molecules, test split has {available}")]
    InsufficientPool { needed: usize, available: usize },

    #[error("insufficient classes: need {needed} scaffolds with at least {per_class} spectra, found {available}")]
    InsufficientClasses {
        needed: usize,
        per_class: usize,
        available: usize,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("embedding row {row} is not unit norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint component `{component}`: {reason}")]
    IncompatibleCheckpoint { component: String, reason: String },

    #[error("unknown record `{0}`")]
    UnknownRecord(String),

    #[error("encoding failed for {unit}: {source}")]
    Encoding {
        unit: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
