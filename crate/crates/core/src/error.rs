use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("domain mismatch on `{attr}`: {detail}")]
    DomainMismatch { attr: String, detail: String },

    #[error("slot {slot} out of bounds for arena {arena} (capacity {capacity})")]
    OutOfBounds {
        arena: usize,
        slot: usize,
        capacity: usize,
    },

    #[error("arena {0} was freed")]
    ArenaFreed(usize),

    #[error("slot {slot} of arena {arena} does not hold a tuple")]
    EmptySlot { arena: usize, slot: usize },

    #[error("TM budget exceeded: requested {requested} words with {in_use} in use, budget {budget}")]
    TmBudgetExceeded {
        requested: usize,
        in_use: usize,
        budget: usize,
    },

    #[error("filter size mismatch: {0}")]
    SizeMismatch(String),

    #[error("stitch mismatch at position {position}: {detail}")]
    StitchMismatch { position: usize, detail: String },

    #[error("checked 64-bit arithmetic overflowed in {0}")]
    Overflow(&'static str),

    #[error("weighted sequence is not prefix-heavy (step {step})")]
    NotPrefixHeavy { step: usize },

    #[error("internal schedule error: {0}")]
    InternalSchedule(String),

    #[error("cyclic join: {0}")]
    CyclicJoin(String),

    #[error("unsupported grouping: {0}")]
    UnsupportedGrouping(String),

    #[error("foreign key violation: {0}")]
    FkViolation(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("could not generate a matched instance pair after {0} attempts")]
    GenerationTimeout(usize),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
