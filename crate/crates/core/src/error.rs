use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, PkmdpError>;

#[derive(Debug, Error)]
pub enum PkmdpError {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("invalid space `{name}`: {reason}")]
    InvalidSpace { name: String, reason: String },

    #[error("non-finite logit at observation {obs}, action {action}")]
    NonFiniteLogit { obs: usize, action: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid interface sequence: {0}")]
    InvalidSequence(String),

    /// The recorded (Y, Z) sequences have zero probability under the known model.
    #[error("impossible interface sequence: zero likelihood at time slice {slice}")]
    ImpossibleSequence { slice: usize },

    /// Every importance weight underflowed; the candidate policy shares no
    /// support with the sampling policies.
    #[error("negligible overlap between candidate policy and all sampling policies")]
    NegligibleOverlap,

    #[error("experience buffer is empty")]
    EmptyBuffer,

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("invalid variant {0}; expected 1, 2 or 3")]
    InvalidVariant(u8),

    #[error("enumeration bound exceeded: {count} > {limit}")]
    EnumerationBound { count: u128, limit: u128 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model variants disagree (suspect variants {suspects:?}): {detail}")]
    VariantsDiverge { suspects: Vec<u8>, detail: String },

    #[error("run {run}, episode {episode}: {source}")]
    Experiment {
        run: usize,
        episode: usize,
        #[source]
        source: Box<PkmdpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
