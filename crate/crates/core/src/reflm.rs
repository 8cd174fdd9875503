//! Deterministic backoff n-gram language model.
//!
//! Serves as the target model in tests and benchmarks: Laplace-smoothed
//! counts at each context length, backing off to shorter contexts whenever
//! the current tuple was never observed. Distributions are exact `f64`
//! arithmetic over the count tables, so identical inputs always produce
//! bit-identical outputs.

use std::collections::HashMap;

use crate::draft::DraftBuffer;
use crate::format::{ChecksumReader, ChecksumWriter};
use crate::token::{Corpus, TokenId};
use crate::verify::LanguageModel;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RESTNG01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    by_token: HashMap<TokenId, u64>,
}

/// Backoff n-gram model of the given order (order 3 = trigram: contexts of
/// up to two tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    vocab_size: u32,
    /// `levels[k]` maps length-`k` contexts to their continuation counts.
    levels: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NgramModel {
    /// Count every `(context, next token)` window of context length
    /// `0..order` within each document; windows never span documents.
    pub fn train(corpus: &Corpus, order: usize) -> Self {
        assert!(order >= 1, "order must be at least 1");
        let mut levels: Vec<HashMap<Vec<TokenId>, ContextCounts>> = vec![HashMap::new(); order];
        for doc in corpus.documents() {
            for i in 0..doc.len() {
                let token = doc[i];
                for k in 0..order.min(i + 1) {
                    let context = &doc[i - k..i];
                    let entry = levels[k].entry(context.to_vec()).or_default();
                    entry.total += 1;
                    *entry.by_token.entry(token).or_insert(0) += 1;
                }
            }
        }
        NgramModel {
            order,
            vocab_size: corpus.vocab_size(),
            levels,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Laplace-smoothed next-token distribution for the longest observed
    /// context suffix: `p(x | ctx) = (count(ctx, x) + 1) / (count(ctx) + V)`,
    /// backing off one token at a time down to the smoothed unigram.
    pub fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let longest = (self.order - 1).min(context.len());
        for k in (0..=longest).rev() {
            let suffix = &context[context.len() - k..];
            if let Some(counts) = self.levels[k].get(suffix) {
                return self.smoothed(counts);
            }
            if k == 0 {
                // The empty context is absent only for an empty corpus;
                // smoothing still yields the uniform distribution.
                return self.smoothed(&ContextCounts::default());
            }
        }
        unreachable!("the k = 0 level always resolves");
    }

    fn smoothed(&self, counts: &ContextCounts) -> Vec<f64> {
        let vocab = self.vocab_size as usize;
        let denom = (counts.total + self.vocab_size as u64) as f64;
        let mut dist = vec![1.0 / denom; vocab];
        for (&token, &count) in &counts.by_token {
            dist[token as usize] = (count + 1) as f64 / denom;
        }
        dist
    }

    /// Encode to the `RESTNG01` on-disk format. Entries within each level are
    /// sorted by `(context, token)`, so equal models encode identically.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ChecksumWriter::new(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.order as u32);
        w.u32(self.vocab_size);
        for level in &self.levels {
            let mut entries: Vec<(&Vec<TokenId>, TokenId, u64)> = level
                .iter()
                .flat_map(|(context, counts)| {
                    counts.by_token.iter().map(move |(&t, &c)| (context, t, c))
                })
                .collect();
            entries.sort();
            w.u64(entries.len() as u64);
            for (context, token, count) in entries {
                for &c in context.iter() {
                    w.u32(c);
                }
                w.u32(token);
                w.u64(count);
            }
        }
        w.finish()
    }

    /// Decode from the `RESTNG01` on-disk format.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ChecksumReader::open(bytes, MAGIC, "RESTNG01")?;
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let order = r.u32("order")? as usize;
        if order == 0 {
            return Err(Error::InvalidFormat("order must be at least 1".into()));
        }
        let vocab_size = r.u32("vocab size")?;
        // Structural pass first, so a corrupt entry count surfaces as a
        // truncation error rather than whatever garbage gets decoded first.
        let mut raw_levels = Vec::with_capacity(order);
        for k in 0..order {
            let entry_count = r.u64("level entry count")?;
            let mut entries = Vec::new();
            for _ in 0..entry_count {
                let context = r.u32_array(k, "context tokens")?;
                let token = r.u32("entry token")?;
                let count = r.u64("entry count")?;
                entries.push((context, token, count));
            }
            raw_levels.push(entries);
        }
        r.expect_end()?;

        let mut levels = Vec::with_capacity(order);
        for entries in raw_levels {
            let mut level: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
            for (context, token, count) in entries {
                if token >= vocab_size {
                    return Err(Error::TokenOutOfRange { token, vocab_size });
                }
                if let Some(&bad) = context.iter().find(|&&c| c >= vocab_size) {
                    return Err(Error::TokenOutOfRange {
                        token: bad,
                        vocab_size,
                    });
                }
                let slot = level.entry(context).or_default();
                slot.total += count;
                if slot.by_token.insert(token, count).is_some() {
                    return Err(Error::InvalidFormat("duplicate count entry".into()));
                }
            }
            levels.push(level);
        }
        Ok(NgramModel {
            order,
            vocab_size,
            levels,
        })
    }

    pub fn write_to(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read_from(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl LanguageModel for NgramModel {
    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// One distribution per evaluated position: the context end first, then
    /// each buffer node conditioned on exactly `context ++ root_path(node)`.
    fn tree_step(&self, context: &[TokenId], buffer: &DraftBuffer) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(1 + buffer.len());
        out.push(self.next_distribution(context));
        let mut extended = context.to_vec();
        for i in 0..buffer.len() {
            let path = buffer.root_path(i);
            extended.truncate(context.len());
            extended.extend_from_slice(&path);
            out.push(self.next_distribution(&extended));
        }
        Ok(out)
    }
}
