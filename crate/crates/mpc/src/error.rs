use thiserror::Error;

pub type Result<T> = std::result::Result<T, MpcError>;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("value {value} is outside the representable range (|x| < {bound})")]
    Overflow { value: f64, bound: f64 },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("session mismatch: {0} vs {1}")]
    SessionMismatch(u32, u32),
    #[error("fixed-point configs differ")]
    ConfigMismatch,
    #[error("beaver triple {0} was already consumed")]
    TripleReuse(u64),
    #[error("protocol desync: {0}")]
    ProtocolDesync(String),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("triple file: {0}")]
    TripleFile(String),
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
    #[error("peer disconnected")]
    Disconnected,
    #[error("invalid fixed-point config: {0}")]
    Config(String),
}
