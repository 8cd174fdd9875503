//! Retrieval-based speculative decoding.
//!
//! Instead of a small draft model, draft tokens are retrieved from an indexed
//! token corpus (the [`Datastore`]): the longest suffix of the current context
//! that occurs in the corpus is located through a suffix array, the tokens
//! following each occurrence become continuation candidates, and the highest
//! frequency candidate prefixes are arranged into a draft tree. A single
//! forward pass of the target model over the tree's breadth-first pseudo
//! sequence (with an ancestor-only attention mask) verifies all branches at
//! once. Accepted tokens are exactly the ones ordinary autoregressive decoding
//! would have produced, so output is bit-identical to the baseline — the loop
//! just emits several tokens per model call.
//!
//! The crate ships a deterministic backoff n-gram model ([`NgramModel`]) as a
//! desk-scale stand-in for a large LM, a byte/word tokenizer pair, binary file
//! formats for the datastore and model, a line-delimited subprocess protocol
//! for hosting the model out of process, and a benchmark harness that checks
//! baseline/speculative output equality before reporting any speed numbers.

pub mod bench;
pub mod datastore;
pub mod draft;
pub mod extproc;
pub mod format;
pub mod reflm;
pub mod retrieval;
pub mod sampler;
pub mod token;
pub mod tokenizer;
pub mod verify;

pub use datastore::Datastore;
pub use draft::{build_trie, flatten, select_top_c, DraftBuffer, DraftTree, Trie};
pub use reflm::NgramModel;
pub use retrieval::{retrieve, ContinuationSet, RetrievalConfig};
pub use sampler::{sample_token, SamplingConfig, SamplingStrategy};
pub use token::{ingest, Corpus, TokenId, SENTINEL};
pub use verify::{
    generate, generate_baseline, verify_step, GenerationConfig, GenerationReport, LanguageModel,
    StepResult, Verifier,
};

/// Errors across datastore construction, retrieval, generation, and file I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("document {0} is empty")]
    EmptyDocument(usize),
    #[error("token {token} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: u32 },
    #[error("corpus has {0} tokens, exceeding the 32-bit position limit")]
    CorpusTooLarge(u64),
    #[error("empty query")]
    EmptyQuery,
    #[error("query contains the document sentinel")]
    SentinelInQuery,
    #[error("position {pos} out of bounds for corpus of {len} tokens")]
    PositionOutOfBounds { pos: usize, len: usize },
    #[error("empty context")]
    EmptyContext,
    #[error("degenerate distribution: no positive probability mass")]
    DegenerateDistribution,
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    TruncatedFile(&'static str),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("invalid file contents: {0}")]
    InvalidFormat(String),
    #[error("unknown word {0:?} (not in datastore vocabulary)")]
    UnknownWord(String),
    #[error("verifier protocol error: {0}")]
    Protocol(String),
    #[error(
        "speculative output diverged from baseline for prompt {prompt_index} at token {position}"
    )]
    EquivalenceViolation {
        prompt_index: usize,
        position: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
