//! Benchmark harness: run baseline and speculative generation over a prompt
//! set, enforce output equality, and aggregate speed metrics.
//!
//! A speed report only exists for runs whose speculative output was
//! token-for-token identical to the baseline; any divergence is a hard
//! [`Error::EquivalenceViolation`]. With the `parallel` feature, prompts run
//! across worker threads (each sequence stays single-threaded) and results
//! are aggregated in prompt order either way.

use serde::Serialize;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::datastore::Datastore;
use crate::draft::DraftBuffer;
use crate::retrieval::ContinuationSet;
use crate::sampler::position_uniform;
use crate::token::TokenId;
use crate::verify::{
    generate_baseline, generate_with_selector, DraftSelector, GenerationConfig, TrieSelector,
    Verifier,
};
use crate::{Error, Result};

/// How draft tokens are picked from the retrieved continuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DraftSelection {
    /// Weighted-trie top-`c` selection (the production strategy).
    Trie,
    /// Seeded random pick of whole candidate sequences; shared prefixes stay
    /// duplicated. Comparison baseline only.
    Random {
        max_sequences: usize,
        max_len: usize,
    },
}

impl DraftSelection {
    /// The random comparator's default budget: 8 sequences of at most 8
    /// tokens, matching the 64-token trie budget.
    pub fn random_default() -> Self {
        DraftSelection::Random {
            max_sequences: 8,
            max_len: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Run prompts across worker threads. Only effective when the crate is
    /// built with the `parallel` feature; otherwise prompts run one by one.
    pub parallel: bool,
    pub draft_selection: DraftSelection,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            parallel: cfg!(feature = "parallel"),
            draft_selection: DraftSelection::Trie,
        }
    }
}

/// Per-prompt benchmark row.
#[derive(Debug, Clone, Serialize)]
pub struct PromptResult {
    pub prompt_index: usize,
    #[serde(rename = "L")]
    pub tokens_generated: u64,
    #[serde(rename = "F")]
    pub forward_passes: u64,
    #[serde(rename = "M")]
    pub mean_generated_length: f64,
    pub mean_token_time_ms: f64,
    pub retrieval_time_ms_mean: f64,
    pub speedup: f64,
    pub matched_suffix_histogram: Vec<u64>,
}

/// Suite-level aggregates. `mean_generated_length` is the pooled `ΣL / ΣF`,
/// not a mean of per-prompt ratios.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub prompt_count: usize,
    pub tokens_generated: u64,
    pub forward_passes: u64,
    pub mean_generated_length: f64,
    pub mean_token_time_ms: f64,
    pub baseline_mean_token_time_ms: f64,
    pub speedup: f64,
    pub retrieval_time_ms_mean: f64,
    /// Retrieval (including trie construction) as a fraction of total
    /// speculative step time.
    pub retrieval_share: f64,
    pub matched_suffix_histogram: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub prompts: Vec<PromptResult>,
    pub aggregate: Aggregate,
}

/// Run baseline and speculative generation for every prompt, assert output
/// equality, and aggregate. Deterministic in everything except wall-clock
/// timings: re-running with the same seeds reproduces every `L`, `F`, `M`.
pub fn run_suite<V: Verifier + Sync>(
    verifier: &V,
    ds: &Datastore,
    prompts: &[Vec<TokenId>],
    cfg: &GenerationConfig,
    options: &BenchOptions,
) -> Result<BenchReport> {
    let run_one = |(index, prompt): (usize, &Vec<TokenId>)| -> Result<(PromptResult, RunTotals)> {
        run_prompt(verifier, ds, index, prompt, cfg, options.draft_selection)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<(PromptResult, RunTotals)> = if options.parallel {
        prompts
            .par_iter()
            .enumerate()
            .map(run_one)
            .collect::<Result<_>>()?
    } else {
        prompts
            .iter()
            .enumerate()
            .map(run_one)
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<(PromptResult, RunTotals)> = prompts
        .iter()
        .enumerate()
        .map(run_one)
        .collect::<Result<_>>()?;

    Ok(aggregate(rows, cfg.retrieval.n_max))
}

/// Wall-clock totals that only matter for the aggregate.
#[derive(Debug, Clone, Copy, Default)]
struct RunTotals {
    rest_total_ms: f64,
    baseline_total_ms: f64,
    retrieval_total_ms: f64,
}

fn run_prompt<V: Verifier + Sync>(
    verifier: &V,
    ds: &Datastore,
    index: usize,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    selection: DraftSelection,
) -> Result<(PromptResult, RunTotals)> {
    let (baseline_out, baseline_report) = generate_baseline(verifier, prompt, cfg)?;
    let (rest_out, rest_report) = match selection {
        DraftSelection::Trie => {
            let selector = TrieSelector {
                budget: cfg.draft_budget,
            };
            generate_with_selector(verifier, ds, prompt, cfg, &selector)?
        }
        DraftSelection::Random {
            max_sequences,
            max_len,
        } => {
            let selector = RandomChainSelector {
                seed: mix_seed(cfg.sampling.seed, index as u64),
                max_sequences,
                max_len,
            };
            generate_with_selector(verifier, ds, prompt, cfg, &selector)?
        }
    };

    if rest_out != baseline_out {
        let position = rest_out
            .iter()
            .zip(&baseline_out)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| rest_out.len().min(baseline_out.len()));
        return Err(Error::EquivalenceViolation {
            prompt_index: index,
            position,
        });
    }

    let speedup = if rest_report.mean_token_time_ms > 0.0 {
        baseline_report.mean_token_time_ms / rest_report.mean_token_time_ms
    } else {
        1.0
    };
    let row = PromptResult {
        prompt_index: index,
        tokens_generated: rest_report.tokens_generated,
        forward_passes: rest_report.forward_passes,
        mean_generated_length: rest_report.mean_generated_length,
        mean_token_time_ms: rest_report.mean_token_time_ms,
        retrieval_time_ms_mean: rest_report.retrieval_time_ms_mean,
        speedup,
        matched_suffix_histogram: rest_report.matched_suffix_histogram.clone(),
    };
    let totals = RunTotals {
        rest_total_ms: rest_report.total_time_ms,
        baseline_total_ms: baseline_report.total_time_ms,
        retrieval_total_ms: rest_report.retrieval_time_ms_total,
    };
    Ok((row, totals))
}

fn aggregate(rows: Vec<(PromptResult, RunTotals)>, n_max: usize) -> BenchReport {
    let mut tokens = 0u64;
    let mut passes = 0u64;
    let mut histogram = vec![0u64; n_max + 1];
    let mut totals = RunTotals::default();
    for (row, t) in &rows {
        tokens += row.tokens_generated;
        passes += row.forward_passes;
        for (slot, count) in histogram.iter_mut().zip(&row.matched_suffix_histogram) {
            *slot += count;
        }
        totals.rest_total_ms += t.rest_total_ms;
        totals.baseline_total_ms += t.baseline_total_ms;
        totals.retrieval_total_ms += t.retrieval_total_ms;
    }
    let aggregate = Aggregate {
        prompt_count: rows.len(),
        tokens_generated: tokens,
        forward_passes: passes,
        mean_generated_length: if passes == 0 {
            1.0
        } else {
            tokens as f64 / passes as f64
        },
        mean_token_time_ms: ratio(totals.rest_total_ms, tokens),
        baseline_mean_token_time_ms: ratio(totals.baseline_total_ms, tokens),
        speedup: if totals.rest_total_ms > 0.0 {
            totals.baseline_total_ms / totals.rest_total_ms
        } else {
            1.0
        },
        retrieval_time_ms_mean: ratio(totals.retrieval_total_ms, passes),
        retrieval_share: if totals.rest_total_ms > 0.0 {
            totals.retrieval_total_ms / totals.rest_total_ms
        } else {
            0.0
        },
        matched_suffix_histogram: histogram,
    };
    BenchReport {
        prompts: rows.into_iter().map(|(row, _)| row).collect(),
        aggregate,
    }
}

fn ratio(ms: f64, count: u64) -> f64 {
    if count == 0 {
        0.0
    } else {
        ms / count as f64
    }
}

/// SplitMix64 finalizer; decorrelates per-prompt selector seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random draft selection: pick up to `max_sequences` whole continuations
/// (without replacement, seeded by the output position) and lay them out as
/// independent chains, duplicating any shared prefixes. Used only as a
/// comparison point for trie selection.
#[derive(Debug, Clone)]
pub struct RandomChainSelector {
    pub seed: u64,
    pub max_sequences: usize,
    pub max_len: usize,
}

impl DraftSelector for RandomChainSelector {
    fn build_buffer(&self, set: &ContinuationSet, pos0: u64) -> DraftBuffer {
        if set.continuations.is_empty() {
            return DraftBuffer::empty();
        }
        let take = self.max_sequences.min(set.continuations.len());
        // Partial Fisher–Yates keyed by (seed, pos0, slot).
        let mut indices: Vec<usize> = (0..set.continuations.len()).collect();
        for k in 0..take {
            let u = position_uniform(self.seed, pos0 * 64 + k as u64);
            let j = k + ((u * (indices.len() - k) as f64) as usize).min(indices.len() - k - 1);
            indices.swap(k, j);
        }
        let chains: Vec<&[TokenId]> = indices[..take]
            .iter()
            .map(|&i| {
                let seq = &set.continuations[i];
                &seq[..seq.len().min(self.max_len)]
            })
            .collect();
        DraftBuffer::from_chains(&chains)
    }
}

/// Deterministic synthetic corpus: documents composed from a fixed pool of
/// phrases, sampled with a skew so some phrases are much more common than
/// others. Repetition is what gives retrieval something to find.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub vocab_size: u32,
    pub phrase_count: usize,
    pub phrase_len: (usize, usize),
    pub doc_len_phrases: (usize, usize),
    /// Stop adding documents once the token total reaches this.
    pub total_tokens: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0x5eed,
            vocab_size: 4096,
            phrase_count: 1500,
            phrase_len: (12, 40),
            doc_len_phrases: (8, 24),
            total_tokens: 1 << 18, // 1 MiB of 4-byte tokens
        }
    }
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }
}

/// Generate the synthetic documents.
pub fn phrase_corpus(cfg: &SynthConfig) -> Vec<Vec<TokenId>> {
    let mut rng = SplitMix64(cfg.seed);
    let phrases: Vec<Vec<TokenId>> = (0..cfg.phrase_count)
        .map(|_| {
            let len = rng.range(cfg.phrase_len.0, cfg.phrase_len.1);
            (0..len)
                .map(|_| rng.below(cfg.vocab_size as usize) as TokenId)
                .collect()
        })
        .collect();

    let mut docs = Vec::new();
    let mut total = 0usize;
    while total < cfg.total_tokens {
        let phrase_n = rng.range(cfg.doc_len_phrases.0, cfg.doc_len_phrases.1);
        let mut doc = Vec::new();
        for _ in 0..phrase_n {
            // Mild skew: low-index phrases occur a few times as often.
            let u = rng.next() as f64 / u64::MAX as f64;
            let idx = (u.powf(1.5) * cfg.phrase_count as f64) as usize;
            doc.extend_from_slice(&phrases[idx.min(cfg.phrase_count - 1)]);
        }
        total += doc.len() + 1;
        docs.push(doc);
    }
    docs
}

/// Deterministically sample held-in prompts: prefixes of corpus documents.
pub fn sample_prompts(
    docs: &[Vec<TokenId>],
    count: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Vec<Vec<TokenId>> {
    let mut rng = SplitMix64(seed);
    (0..count)
        .map(|_| {
            let doc = &docs[rng.below(docs.len())];
            let len = rng.range(len_range.0, len_range.1).min(doc.len());
            doc[..len].to_vec()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflm::NgramModel;
    use crate::token::ingest;
    use crate::Datastore;

    fn tiny_suite() -> (NgramModel, Datastore, Vec<Vec<TokenId>>) {
        let cfg = SynthConfig {
            total_tokens: 4000,
            phrase_count: 40,
            vocab_size: 64,
            ..Default::default()
        };
        let docs = phrase_corpus(&cfg);
        let corpus = ingest(&docs, cfg.vocab_size).unwrap();
        let model = NgramModel::train(&corpus, 3);
        let ds = Datastore::build(corpus).unwrap();
        let prompts = sample_prompts(&docs, 8, (8, 16), 7);
        (model, ds, prompts)
    }

    /// A verifier whose choice depends on the draft it was shown, which a
    /// correct engine never does: the equality gate must trip on it.
    struct BufferSensitiveVerifier;

    impl crate::verify::Verifier for BufferSensitiveVerifier {
        fn choose_tokens(
            &self,
            _context: &[TokenId],
            buffer: &crate::draft::DraftBuffer,
            _sampling: &crate::sampler::SamplingConfig,
            pos0: u64,
        ) -> crate::Result<Vec<TokenId>> {
            let bias = if buffer.is_empty() { 0 } else { 1 };
            Ok((0..buffer.len() as u64 + 1)
                .map(|i| ((pos0 + i + bias) % 5) as TokenId)
                .collect())
        }
    }

    #[test]
    fn diverging_outputs_are_a_hard_error() {
        let (_, ds, prompts) = tiny_suite();
        let cfg = GenerationConfig {
            max_new_tokens: 16,
            ..Default::default()
        };
        let err = run_suite(
            &BufferSensitiveVerifier,
            &ds,
            &prompts,
            &cfg,
            &BenchOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EquivalenceViolation { .. }));
    }

    #[test]
    fn suite_reports_equal_outputs_and_m_at_least_one() {
        let (model, ds, prompts) = tiny_suite();
        let cfg = GenerationConfig {
            max_new_tokens: 32,
            ..Default::default()
        };
        let report = run_suite(&model, &ds, &prompts, &cfg, &BenchOptions::default()).unwrap();
        assert_eq!(report.prompts.len(), prompts.len());
        assert!(report.aggregate.mean_generated_length >= 1.0);
        for row in &report.prompts {
            assert!(row.mean_generated_length >= 1.0);
            assert_eq!(
                row.matched_suffix_histogram.iter().sum::<u64>(),
                row.forward_passes
            );
        }
    }

    #[test]
    fn suite_counts_are_reproducible_and_parallel_agnostic() {
        let (model, ds, prompts) = tiny_suite();
        let cfg = GenerationConfig {
            max_new_tokens: 24,
            ..Default::default()
        };
        let sequential = BenchOptions {
            parallel: false,
            ..Default::default()
        };
        let a = run_suite(&model, &ds, &prompts, &cfg, &BenchOptions::default()).unwrap();
        let b = run_suite(&model, &ds, &prompts, &cfg, &sequential).unwrap();
        assert_eq!(
            a.aggregate.mean_generated_length,
            b.aggregate.mean_generated_length
        );
        for (x, y) in a.prompts.iter().zip(&b.prompts) {
            assert_eq!(x.prompt_index, y.prompt_index);
            assert_eq!(x.tokens_generated, y.tokens_generated);
            assert_eq!(x.forward_passes, y.forward_passes);
        }
    }

    #[test]
    fn random_selection_runs_and_stays_equal_to_baseline() {
        let (model, ds, prompts) = tiny_suite();
        let cfg = GenerationConfig {
            max_new_tokens: 24,
            ..Default::default()
        };
        let options = BenchOptions {
            draft_selection: DraftSelection::random_default(),
            ..Default::default()
        };
        let report = run_suite(&model, &ds, &prompts, &cfg, &options).unwrap();
        assert!(report.aggregate.mean_generated_length >= 1.0);
    }

    #[test]
    fn random_selector_respects_its_budget() {
        let set = ContinuationSet {
            matched_suffix_len: 2,
            continuations: (0..40u32).map(|i| vec![i % 16; 12]).collect(),
            truncated: false,
        };
        let selector = RandomChainSelector {
            seed: 3,
            max_sequences: 8,
            max_len: 8,
        };
        let buffer = selector.build_buffer(&set, 5);
        assert!(buffer.len() <= 64);
        assert_eq!(buffer.len(), 64); // 8 chains of 8, no prefix sharing
        let again = selector.build_buffer(&set, 5);
        assert_eq!(buffer, again, "selection is deterministic per position");
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = phrase_corpus(&cfg);
        let b = phrase_corpus(&cfg);
        assert_eq!(a, b);
        let total: usize = a.iter().map(|d| d.len() + 1).sum();
        assert!(total >= cfg.total_tokens);
        assert!(a.iter().all(|d| !d.is_empty()));
    }
}
