use privdiv_mpc::MpcError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("non-finite or out-of-range value: {0}")]
    NonFinite(String),
    #[error("source dataset is empty")]
    EmptySource,
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("too few samples: {got} < {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("covariance is singular even after ridge")]
    SingularCovariance,
    #[error("asked for {want} of {have} candidates")]
    NotEnoughCandidates { want: usize, have: usize },
    #[error("site {site} has no attribute `{attribute}`")]
    MissingAttribute { site: String, attribute: String },
    #[error("category sets differ for `{0}`")]
    CategoryMismatch(String),
    #[error("no score for candidate `{0}`")]
    IncompleteScores(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooShort { got: usize, need: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("missing matched pair: {0}")]
    MissingPairs(String),
    #[error("{file}: row {row}, column {column}: {message}")]
    Schema {
        file: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CoreError {
    /// Whether the error is only the echo of the other party going away.
    pub fn is_disconnect(&self) -> bool {
        matches!(self, CoreError::Mpc(MpcError::Disconnected))
    }
}

impl privdiv_mpc::PartyError for CoreError {
    fn is_disconnect(&self) -> bool {
        CoreError::is_disconnect(self)
    }
}
