use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape for {op}: {shape:?} ({detail})")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },
    #[error("softmax row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("attention mask has no valid positions")]
    EmptyAttentionMask,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("compute graph already consumed by a backward pass")]
    GraphConsumed,
    #[error("token id {id} out of range for embedding table with {vocab} rows")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "even layer mapping needs heavy layer count divisible by light layer count, \
         got {l_heavy} and {l_light}"
    )]
    IndivisibleMapping { l_heavy: usize, l_light: usize },
    #[error("{what}: sequence length {got} does not match configured {expected}")]
    SeqLen {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("heavy layer {layer} missing from cached representations")]
    MissingHeavyLayer { layer: usize },
    #[error("stale cached representations: cached fingerprint {cached:#018x}, model fingerprint {model:#018x}")]
    StaleCache { cached: u64, model: u64 },
    #[error("cache entry {path}: {detail}")]
    CacheIntegrity { path: PathBuf, detail: String },
    #[error("corpus line {line}: {detail}")]
    Corpus { line: usize, detail: String },
    #[error("product {product}: {detail}")]
    Record { product: String, detail: String },
    #[error("duplicate evaluation key ({product}, {attribute})")]
    DuplicateKey { product: String, attribute: String },
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGrad { name: String },
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Msg(String),
}
