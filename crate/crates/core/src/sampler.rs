//! Token sampling with a position-keyed deterministic draw.
//!
//! The nucleus draw at absolute output position `t` is a pure function of
//! `(seed, t)`. Speculation therefore cannot change what gets sampled at a
//! position: whether a token arrives as an accepted draft or as a plain
//! autoregressive step, the same uniform variate decides it, which makes
//! speculative output bit-identical to the baseline under any strategy.

use std::str::FromStr;

use crate::token::TokenId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Argmax with lowest-token-id tie break.
    Greedy,
    /// Temperature-scaled nucleus (top-p) sampling.
    Nucleus,
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(SamplingStrategy::Greedy),
            "nucleus" => Ok(SamplingStrategy::Nucleus),
            other => Err(format!(
                "unknown strategy {other:?} (expected greedy|nucleus)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            strategy: SamplingStrategy::Greedy,
            top_p: 0.95,
            temperature: 0.8,
            seed: 0,
        }
    }
}

/// SplitMix64 finalizer over `(seed, counter)`: a stateless counter-based
/// generator. Returns a uniform variate in `[0, 1)` with 53 random bits.
pub fn position_uniform(seed: u64, position: u64) -> f64 {
    let mut z = seed.wrapping_add(position.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Draw one token from a normalized distribution. `output_position` is the
/// absolute index of the output token this draw decides.
pub fn sample_token(dist: &[f64], cfg: &SamplingConfig, output_position: u64) -> Result<TokenId> {
    match cfg.strategy {
        SamplingStrategy::Greedy => greedy(dist),
        SamplingStrategy::Nucleus => nucleus(dist, cfg, output_position),
    }
}

fn greedy(dist: &[f64]) -> Result<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 && best.is_none_or(|(_, bp)| p > bp) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i as TokenId)
        .ok_or(Error::DegenerateDistribution)
}

fn nucleus(dist: &[f64], cfg: &SamplingConfig, output_position: u64) -> Result<TokenId> {
    // Temperature in probability space: p^(1/T), renormalized.
    let exponent = 1.0 / cfg.temperature;
    let mut scaled: Vec<(usize, f64)> = dist
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(i, &p)| (i, p.powf(exponent)))
        .collect();
    let total: f64 = scaled.iter().map(|&(_, p)| p).sum();
    if scaled.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateDistribution);
    }

    // Probability descending, token id ascending; keep the minimal prefix
    // whose cumulative mass reaches top_p.
    scaled.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut kept = 0usize;
    let mut mass = 0.0;
    for &(_, p) in &scaled {
        kept += 1;
        mass += p;
        if mass >= cfg.top_p * total {
            break;
        }
    }
    let nucleus = &scaled[..kept];

    let u = position_uniform(cfg.seed, output_position);
    let threshold = u * mass;
    let mut acc = 0.0;
    for &(i, p) in nucleus {
        acc += p;
        if threshold < acc {
            return Ok(i as TokenId);
        }
    }
    // Floating-point slack: fall back to the last nucleus entry.
    Ok(nucleus[kept - 1].0 as TokenId)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nucleus_cfg(top_p: f64, temperature: f64, seed: u64) -> SamplingConfig {
        SamplingConfig {
            strategy: SamplingStrategy::Nucleus,
            top_p,
            temperature,
            seed,
        }
    }

    #[test]
    fn greedy_takes_the_argmax() {
        let cfg = SamplingConfig::default();
        assert_eq!(sample_token(&[0.1, 0.7, 0.2], &cfg, 0).unwrap(), 1);
    }

    #[test]
    fn greedy_breaks_ties_toward_the_lowest_id() {
        let cfg = SamplingConfig::default();
        assert_eq!(sample_token(&[0.5, 0.5, 0.0], &cfg, 0).unwrap(), 0);
    }

    #[test]
    fn all_zero_distribution_is_degenerate() {
        for strategy in [SamplingStrategy::Greedy, SamplingStrategy::Nucleus] {
            let cfg = SamplingConfig {
                strategy,
                ..Default::default()
            };
            assert!(matches!(
                sample_token(&[0.0, 0.0], &cfg, 0).unwrap_err(),
                Error::DegenerateDistribution
            ));
        }
    }

    #[test]
    fn nucleus_keeps_the_minimal_prefix_and_follows_the_keyed_draw() {
        // dist [0.6, 0.3, 0.1] with top_p 0.8 and T = 1 keeps {0, 1},
        // renormalized to [2/3, 1/3]: token 0 iff u < 2/3.
        let dist = [0.6, 0.3, 0.1];
        for seed in 0..64u64 {
            for pos in 0..8u64 {
                let cfg = nucleus_cfg(0.8, 1.0, seed);
                let u = position_uniform(seed, pos);
                let expected: TokenId = if u < 2.0 / 3.0 { 0 } else { 1 };
                assert_eq!(sample_token(&dist, &cfg, pos).unwrap(), expected);
            }
        }
    }

    #[test]
    fn nucleus_never_picks_outside_the_nucleus() {
        let dist = [0.6, 0.3, 0.1];
        let cfg = nucleus_cfg(0.8, 1.0, 7);
        for pos in 0..2000 {
            assert!(sample_token(&dist, &cfg, pos).unwrap() < 2);
        }
    }

    #[test]
    fn top_p_one_keeps_everything() {
        let dist = [0.25, 0.25, 0.25, 0.25];
        let cfg = nucleus_cfg(1.0, 1.0, 3);
        let mut seen = [false; 4];
        for pos in 0..200 {
            seen[sample_token(&dist, &cfg, pos).unwrap() as usize] = true;
        }
        assert_eq!(seen, [true; 4]);
    }

    #[test]
    fn position_uniform_is_a_pure_function() {
        for seed in [0u64, 1, u64::MAX] {
            for pos in [0u64, 1, 2, 1 << 40] {
                let u = position_uniform(seed, pos);
                assert_eq!(u, position_uniform(seed, pos));
                assert!((0.0..1.0).contains(&u));
            }
        }
        assert_ne!(position_uniform(1, 2), position_uniform(1, 3));
        assert_ne!(position_uniform(1, 2), position_uniform(2, 2));
    }

    #[test]
    fn temperature_sharpens_deterministically() {
        // At very low temperature the top token dominates the nucleus.
        let dist = [0.55, 0.44, 0.01];
        let cfg = nucleus_cfg(0.9, 0.05, 11);
        for pos in 0..200 {
            assert_eq!(sample_token(&dist, &cfg, pos).unwrap(), 0);
        }
    }
}
