use thiserror::Error;

pub type Result<T> = std::result::Result<T, S2aError>;

#[derive(Debug, Error)]
pub enum S2aError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("malformed container at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("benchmark error: {0}")]
    Bench(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl S2aError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        S2aError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
