use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error("checksum mismatch: header says {expected:#010x}, blob hashes to {actual:#010x}")]
    Checksum { expected: u32, actual: u32 },

    #[error("kv cache overflow: {len} positions cached, max_seq_len is {max}")]
    CacheOverflow { len: usize, max: usize },

    #[error("prompt is empty")]
    EmptyPrompt,

    #[error("position {0} is not covered by the token layout")]
    UncoveredPosition(usize),

    #[error("invalid token layout: {0}")]
    InvalidLayout(String),

    #[error("entropy is undefined for an empty attention subset")]
    EmptySubset,

    #[error("visual attention entropy is zero for head {head}; the entropy ratio is undefined")]
    ZeroVisualEntropy { head: usize },

    #[error("attention subset for head {head} has zero total mass")]
    ZeroMass { head: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("every logit is masked; nothing to sample")]
    AllMasked,

    #[error("token id {id} is outside the vocabulary of {vocab} tokens")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("bench invariant violated: {0}")]
    BenchInvariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
