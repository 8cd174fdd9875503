//! Corpus datastore: suffix-array construction and exact substring lookup.
//!
//! The suffix array holds every non-sentinel corpus position, ordered by the
//! lexicographic rank of the suffix starting there. [`SENTINEL`] is `u32::MAX`,
//! so plain token comparison already sorts it after every real token, and a
//! query (which may not contain the sentinel) can never match across a
//! document boundary.

use std::cmp::Ordering;

use crate::format::{ChecksumReader, ChecksumWriter};
use crate::token::{Corpus, TokenId, SENTINEL};
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const MAGIC: &[u8; 8] = b"RESTDS01";
const FORMAT_VERSION: u32 = 1;

/// Positions are stored as `u32`, so the corpus may hold at most this many
/// tokens (one value is reserved for the sentinel comparison trick).
pub const MAX_CORPUS_TOKENS: u64 = (u32::MAX - 1) as u64;

/// An immutable corpus plus its suffix array. Cheap to query concurrently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datastore {
    corpus: Corpus,
    suffix_array: Vec<u32>,
}

impl Datastore {
    /// Index `corpus` for exact substring lookup. Construction is
    /// prefix-doubling (`O(N log^2 N)`) and deterministic: the same corpus
    /// always yields the same suffix array.
    pub fn build(corpus: Corpus) -> Result<Self> {
        if corpus.len() as u64 > MAX_CORPUS_TOKENS {
            return Err(Error::CorpusTooLarge(corpus.len() as u64));
        }
        let suffix_array = sort_suffixes(corpus.tokens());
        Ok(Datastore {
            corpus,
            suffix_array,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Suffix start positions in lexicographic suffix order.
    pub fn suffix_array(&self) -> &[u32] {
        &self.suffix_array
    }

    /// Half-open interval of suffix-array indices whose suffixes start with
    /// `q`. Empty interval means `q` does not occur. Two binary searches,
    /// each comparing at most `q.len()` tokens per probe.
    pub fn find_range(&self, q: &[TokenId]) -> Result<std::ops::Range<usize>> {
        if q.is_empty() {
            return Err(Error::EmptyQuery);
        }
        if q.contains(&SENTINEL) {
            return Err(Error::SentinelInQuery);
        }
        let tokens = self.corpus.tokens();
        let cmp = |&pos: &u32| -> Ordering {
            let suffix = &tokens[pos as usize..];
            let n = suffix.len().min(q.len());
            match suffix[..n].cmp(&q[..n]) {
                Ordering::Equal if n < q.len() => Ordering::Less, // suffix is a proper prefix of q
                ord => ord,
            }
        };
        let lo = self
            .suffix_array
            .partition_point(|p| cmp(p) == Ordering::Less);
        let hi = lo + self.suffix_array[lo..].partition_point(|p| cmp(p) == Ordering::Equal);
        Ok(lo..hi)
    }

    /// Up to `m` tokens starting at `start`, truncated at the first sentinel
    /// so a continuation never crosses into the next document.
    pub fn continuation_at(&self, start: usize, m: usize) -> Result<&[TokenId]> {
        let tokens = self.corpus.tokens();
        if start > tokens.len() {
            return Err(Error::PositionOutOfBounds {
                pos: start,
                len: tokens.len(),
            });
        }
        let window = &tokens[start..tokens.len().min(start + m)];
        let end = window
            .iter()
            .position(|&t| t == SENTINEL)
            .unwrap_or(window.len());
        Ok(&window[..end])
    }

    /// Encode to the `RESTDS01` on-disk format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ChecksumWriter::new(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.corpus.vocab_size());
        w.u64(self.corpus.len() as u64);
        w.u64(self.suffix_array.len() as u64);
        for &t in self.corpus.tokens() {
            w.u32(t);
        }
        for &p in &self.suffix_array {
            w.u32(p);
        }
        w.finish()
    }

    /// Decode from the `RESTDS01` on-disk format, verifying magic, version,
    /// length, checksum, and the structural invariants.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ChecksumReader::open(bytes, MAGIC, "RESTDS01")?;
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let vocab_size = r.u32("vocab size")?;
        let token_count = r.u64("token count")? as usize;
        let suffix_count = r.u64("suffix count")? as usize;
        let tokens = r.u32_array(token_count, "token array")?;
        let suffix_array = r.u32_array(suffix_count, "suffix array")?;
        r.expect_end()?;

        let corpus = Corpus::from_tokens(tokens, vocab_size)?;
        let expected_suffixes = corpus.len() - corpus.doc_count();
        if suffix_array.len() != expected_suffixes {
            return Err(Error::InvalidFormat(format!(
                "suffix array has {} entries, expected {}",
                suffix_array.len(),
                expected_suffixes
            )));
        }
        for &p in &suffix_array {
            match corpus.tokens().get(p as usize) {
                Some(&t) if t != SENTINEL => {}
                _ => {
                    return Err(Error::InvalidFormat(format!(
                        "suffix array entry {p} is not a token position"
                    )))
                }
            }
        }
        Ok(Datastore {
            corpus,
            suffix_array,
        })
    }

    pub fn write_to(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read_from(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Sort all non-sentinel suffix start positions by prefix doubling. Ranks are
/// dense 1-based values; rank 0 stands for "past the end of the sequence" and
/// therefore sorts shorter suffixes first.
fn sort_suffixes(tokens: &[TokenId]) -> Vec<u32> {
    let n = tokens.len();
    if n == 0 {
        return Vec::new();
    }

    let mut sa: Vec<u32> = (0..n as u32).collect();
    sort_positions(&mut sa, |&p| tokens[p as usize]);

    let mut rank: Vec<u32> = vec![0; n];
    let mut max_rank = assign_ranks(&sa, &mut rank, |&p| tokens[p as usize]);

    let mut gap = 1usize;
    while (max_rank as usize) < n && gap < n {
        let pair_key = |p: &u32| -> (u32, u32) {
            let i = *p as usize;
            let second = if i + gap < n { rank[i + gap] } else { 0 };
            (rank[i], second)
        };
        sort_positions(&mut sa, pair_key);
        let mut next_rank = vec![0u32; n];
        max_rank = assign_ranks(&sa, &mut next_rank, pair_key);
        rank = next_rank;
        gap *= 2;
    }

    sa.retain(|&p| tokens[p as usize] != SENTINEL);
    sa
}

/// Dense 1-based ranks for an already-sorted position array. Returns the
/// highest rank assigned.
fn assign_ranks<K: Ord>(sa: &[u32], rank: &mut [u32], key: impl Fn(&u32) -> K) -> u32 {
    let mut current = 1u32;
    rank[sa[0] as usize] = current;
    for w in sa.windows(2) {
        if key(&w[1]) != key(&w[0]) {
            current += 1;
        }
        rank[w[1] as usize] = current;
    }
    current
}

#[cfg(feature = "parallel")]
fn sort_positions<K: Ord + Send>(sa: &mut [u32], key: impl Fn(&u32) -> K + Sync) {
    sa.par_sort_unstable_by_key(key);
}

#[cfg(not(feature = "parallel"))]
fn sort_positions<K: Ord>(sa: &mut [u32], key: impl Fn(&u32) -> K) {
    sa.sort_unstable_by_key(key);
}
