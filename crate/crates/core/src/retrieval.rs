//! Longest-suffix exact-match retrieval.
//!
//! For the current context, probe the datastore with its longest suffix first
//! (up to `n_max` tokens) and shorten until some suffix occurs. Every
//! occurrence contributes the continuation that follows it, with multiplicity;
//! the multiset feeds the draft trie.

use crate::datastore::Datastore;
use crate::token::{TokenId, SENTINEL};
use crate::{Error, Result};

/// Retrieval knobs. `m` is the continuation truncation length, `match_cap`
/// bounds how many occurrences are materialized per step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalConfig {
    /// Longest context suffix length to try.
    pub n_max: usize,
    /// Continuation truncation length.
    pub m: usize,
    /// Maximum occurrences materialized, taken in suffix-array order.
    pub match_cap: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            n_max: 16,
            m: 10,
            match_cap: 5000,
        }
    }
}

/// Result of one retrieval step: the matched suffix length (0 when nothing
/// matched) and the continuation multiset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContinuationSet {
    pub matched_suffix_len: usize,
    pub continuations: Vec<Vec<TokenId>>,
    /// True when more occurrences existed than `match_cap` allowed.
    pub truncated: bool,
}

impl ContinuationSet {
    pub fn empty() -> Self {
        ContinuationSet {
            matched_suffix_len: 0,
            continuations: Vec::new(),
            truncated: false,
        }
    }
}

/// Find the longest context suffix (at most `n_max` tokens, never crossing a
/// sentinel) that occurs in the datastore and return the continuations after
/// each occurrence. Occurrences are taken in suffix-array order, so the
/// result is deterministic and a larger `match_cap` only extends it.
pub fn retrieve(
    ds: &Datastore,
    context: &[TokenId],
    cfg: &RetrievalConfig,
) -> Result<ContinuationSet> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    // A suffix containing the sentinel can never be a valid query.
    let boundary = context
        .iter()
        .rposition(|&t| t == SENTINEL)
        .map_or(context.len(), |p| context.len() - p - 1);
    let start = cfg.n_max.min(boundary);

    for n in (1..=start).rev() {
        let q = &context[context.len() - n..];
        let range = ds.find_range(q)?;
        if range.is_empty() {
            continue;
        }
        let truncated = range.len() > cfg.match_cap;
        let continuations = ds.suffix_array()[range]
            .iter()
            .take(cfg.match_cap)
            .map(|&pos| {
                ds.continuation_at(pos as usize + n, cfg.m)
                    .map(<[TokenId]>::to_vec)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(ContinuationSet {
            matched_suffix_len: n,
            continuations,
            truncated,
        });
    }
    Ok(ContinuationSet::empty())
}
