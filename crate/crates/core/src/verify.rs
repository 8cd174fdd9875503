//! Draft verification and the generation loop.
//!
//! Each step retrieves continuations, arranges them into a draft buffer, and
//! asks the model for its chosen token at the context end and at every buffer
//! node — one forward pass in total. Walking from the root, a draft child is
//! accepted only when it equals the token the model chose at its parent, so
//! the emitted sequence is exactly what plain autoregressive decoding would
//! produce; the draft merely lets one pass emit several tokens. The model's
//! choice at the first mismatch (or at the deepest accepted node) is emitted
//! as the bonus token, so every step makes progress.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::datastore::Datastore;
use crate::draft::{build_trie, flatten, select_top_c, DraftBuffer};
use crate::retrieval::{retrieve, ContinuationSet, RetrievalConfig};
use crate::sampler::{sample_token, SamplingConfig};
use crate::token::TokenId;
use crate::{Error, Result};

/// A model that can evaluate a draft tree in one forward pass: one next-token
/// distribution for the context end and one per buffer node, where node `i`'s
/// distribution depends only on `context ++ root_path(i)`.
pub trait LanguageModel {
    fn vocab_size(&self) -> u32;

    /// Distributions in evaluation order: context end first, then buffer
    /// nodes in buffer order. Each must be normalized.
    fn tree_step(&self, context: &[TokenId], buffer: &DraftBuffer) -> Result<Vec<Vec<f64>>>;
}

/// Anything that can report the model's chosen token at the context end and
/// at every buffer node, in one forward pass. Implemented for every
/// [`LanguageModel`] (distributions plus local sampling) and by the
/// out-of-process verifier, which owns both the model and the sampling.
pub trait Verifier {
    /// Chosen tokens in evaluation order: index 0 for the context end, then
    /// one per buffer node. The draw for a node at depth `d` is keyed by
    /// output position `pos0 + d`.
    fn choose_tokens(
        &self,
        context: &[TokenId],
        buffer: &DraftBuffer,
        sampling: &SamplingConfig,
        pos0: u64,
    ) -> Result<Vec<TokenId>>;
}

impl<T: LanguageModel + ?Sized> Verifier for T {
    fn choose_tokens(
        &self,
        context: &[TokenId],
        buffer: &DraftBuffer,
        sampling: &SamplingConfig,
        pos0: u64,
    ) -> Result<Vec<TokenId>> {
        let dists = self.tree_step(context, buffer)?;
        if dists.len() != buffer.len() + 1 {
            return Err(Error::Protocol(format!(
                "model returned {} distributions for {} positions",
                dists.len(),
                buffer.len() + 1
            )));
        }
        let mut chosen = Vec::with_capacity(dists.len());
        chosen.push(sample_token(&dists[0], sampling, pos0)?);
        for (i, dist) in dists[1..].iter().enumerate() {
            chosen.push(sample_token(
                dist,
                sampling,
                pos0 + u64::from(buffer.depth(i)),
            )?);
        }
        Ok(chosen)
    }
}

/// Full generation settings. Defaults mirror the benchmark configuration:
/// `n_max` 16, `m` 10, `match_cap` 5000, draft budget `c` 64.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub sampling: SamplingConfig,
    pub max_new_tokens: usize,
    /// Generation stops after this token is emitted.
    pub eos_token: Option<TokenId>,
    pub retrieval: RetrievalConfig,
    /// Draft token budget `c`: the maximum number of trie nodes kept.
    pub draft_budget: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            sampling: SamplingConfig::default(),
            max_new_tokens: 128,
            eos_token: None,
            retrieval: RetrievalConfig::default(),
            draft_budget: 64,
        }
    }
}

/// Outcome of one verification step (always exactly one forward pass): the
/// accepted root path of the draft, plus the model's own bonus token at the
/// stopping node. Emitted tokens per step = `accepted.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub accepted: Vec<TokenId>,
    pub bonus: TokenId,
}

/// Walk the draft buffer from the virtual root, accepting each child that
/// matches the model's chosen token at its parent. One forward pass.
pub fn verify_step<V: Verifier + ?Sized>(
    verifier: &V,
    context: &[TokenId],
    buffer: &DraftBuffer,
    cfg: &GenerationConfig,
    pos0: u64,
) -> Result<StepResult> {
    let chosen = verifier.choose_tokens(context, buffer, &cfg.sampling, pos0)?;
    if chosen.len() != buffer.len() + 1 {
        return Err(Error::Protocol(format!(
            "verifier returned {} tokens for {} positions",
            chosen.len(),
            buffer.len() + 1
        )));
    }
    let mut accepted = Vec::new();
    let mut node: Option<usize> = None;
    loop {
        let chosen_here = chosen[node.map_or(0, |i| i + 1)];
        // Trie children carry distinct tokens, so at most one child matches;
        // for chain buffers with duplicates the first in buffer order wins.
        match buffer.child_with_token(node, chosen_here) {
            Some(child) => {
                accepted.push(chosen_here);
                node = Some(child);
            }
            None => {
                return Ok(StepResult {
                    accepted,
                    bonus: chosen_here,
                })
            }
        }
    }
}

/// Per-run statistics. `mean_generated_length` is tokens per forward pass
/// (`L / F`), the overhead-free upper bound on speedup.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationReport {
    pub tokens_generated: u64,
    pub forward_passes: u64,
    pub mean_generated_length: f64,
    pub total_time_ms: f64,
    pub mean_token_time_ms: f64,
    pub retrieval_time_ms_total: f64,
    pub retrieval_time_ms_mean: f64,
    /// `matched_suffix_histogram[n]` counts steps whose longest datastore
    /// match had `n` tokens; index 0 covers misses and plain baseline steps.
    pub matched_suffix_histogram: Vec<u64>,
}

/// Turns one retrieval result into a draft buffer. The production strategy
/// is [`TrieSelector`]; the benchmark harness supplies alternatives.
pub trait DraftSelector {
    fn build_buffer(&self, set: &ContinuationSet, pos0: u64) -> DraftBuffer;
}

/// Weighted-trie top-`c` selection, flattened breadth-first.
#[derive(Debug, Clone)]
pub struct TrieSelector {
    pub budget: usize,
}

impl DraftSelector for TrieSelector {
    fn build_buffer(&self, set: &ContinuationSet, _pos0: u64) -> DraftBuffer {
        flatten(&select_top_c(&build_trie(set), self.budget))
    }
}

/// Speculative generation: retrieve, draft, verify, repeat. Output is
/// token-for-token identical to [`generate_baseline`] under the same config.
pub fn generate<V: Verifier + ?Sized>(
    verifier: &V,
    ds: &Datastore,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
) -> Result<(Vec<TokenId>, GenerationReport)> {
    let selector = TrieSelector {
        budget: cfg.draft_budget,
    };
    generate_with_selector(verifier, ds, prompt, cfg, &selector)
}

/// [`generate`] with a custom draft selection strategy.
pub fn generate_with_selector<V, S>(
    verifier: &V,
    ds: &Datastore,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    selector: &S,
) -> Result<(Vec<TokenId>, GenerationReport)>
where
    V: Verifier + ?Sized,
    S: DraftSelector + ?Sized,
{
    run_loop(verifier, prompt, cfg, |context, pos0| {
        let start = Instant::now();
        let set = retrieve(ds, context, &cfg.retrieval)?;
        let buffer = selector.build_buffer(&set, pos0);
        Ok((set.matched_suffix_len, buffer, start.elapsed()))
    })
}

/// Plain autoregressive decoding: one token per forward pass, with the same
/// position-keyed sampling as the speculative loop.
pub fn generate_baseline<V: Verifier + ?Sized>(
    verifier: &V,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
) -> Result<(Vec<TokenId>, GenerationReport)> {
    run_loop(verifier, prompt, cfg, |_, _| {
        Ok((0, DraftBuffer::empty(), Duration::ZERO))
    })
}

fn run_loop<V: Verifier + ?Sized>(
    verifier: &V,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    mut next_draft: impl FnMut(&[TokenId], u64) -> Result<(usize, DraftBuffer, Duration)>,
) -> Result<(Vec<TokenId>, GenerationReport)> {
    if prompt.is_empty() {
        return Err(Error::EmptyContext);
    }
    let mut context = prompt.to_vec();
    let mut emitted: Vec<TokenId> = Vec::with_capacity(cfg.max_new_tokens);
    let mut histogram = vec![0u64; cfg.retrieval.n_max + 1];
    let mut forward_passes = 0u64;
    let mut retrieval_time = Duration::ZERO;
    let started = Instant::now();

    'generation: while emitted.len() < cfg.max_new_tokens {
        let pos0 = emitted.len() as u64;
        let (matched, buffer, draft_time) = next_draft(&context, pos0)?;
        retrieval_time += draft_time;
        let step = verify_step(verifier, &context, &buffer, cfg, pos0)?;
        forward_passes += 1;
        histogram[matched] += 1;

        let mut hit_eos = false;
        for token in step.accepted {
            if emitted.len() >= cfg.max_new_tokens {
                break 'generation; // accepted past the limit: truncate
            }
            emitted.push(token);
            context.push(token);
            if Some(token) == cfg.eos_token {
                hit_eos = true;
                break;
            }
        }
        if hit_eos {
            break;
        }
        if emitted.len() >= cfg.max_new_tokens {
            break;
        }
        emitted.push(step.bonus);
        context.push(step.bonus);
        if Some(step.bonus) == cfg.eos_token {
            break;
        }
    }

    let total = started.elapsed();
    let tokens_generated = emitted.len() as u64;
    let report = GenerationReport {
        tokens_generated,
        forward_passes,
        mean_generated_length: if forward_passes == 0 {
            1.0
        } else {
            tokens_generated as f64 / forward_passes as f64
        },
        total_time_ms: as_ms(total),
        mean_token_time_ms: if tokens_generated == 0 {
            0.0
        } else {
            as_ms(total) / tokens_generated as f64
        },
        retrieval_time_ms_total: as_ms(retrieval_time),
        retrieval_time_ms_mean: if forward_passes == 0 {
            0.0
        } else {
            as_ms(retrieval_time) / forward_passes as f64
        },
        matched_suffix_histogram: histogram,
    };
    Ok((emitted, report))
}

fn as_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
