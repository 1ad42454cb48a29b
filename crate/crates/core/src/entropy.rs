// SPDX-License-Identifier: Apache-2.0

//! Simulated on-block true random number generators.
//!
//! A real ring-oscillator TRNG is modelled as a seeded stream of i.i.d. bits
//! with a configurable probability of emitting a one. Several sources can be
//! XOR-combined; the combination is what a security block would sample when
//! it draws a challenge nonce.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("bias {0} is outside [0, 1]")]
    BadBias(f64),
    #[error("requested zero bits")]
    ZeroBits,
    #[error("no entropy sources to combine")]
    NoSources,
}

/// Anything a security block can pull raw randomness from.
pub trait Entropy {
    fn fill(&mut self, buf: &mut [u8]);
}

/// A seeded, optionally biased bit source.
#[derive(Debug, Clone)]
pub struct EntropySource {
    seed: u64,
    bias: f64,
    label: String,
    rng: ChaCha12Rng,
}

impl EntropySource {
    pub fn new(seed: u64, bias: f64, label: impl Into<String>) -> Result<Self, EntropyError> {
        if !(0.0..=1.0).contains(&bias) || bias.is_nan() {
            return Err(EntropyError::BadBias(bias));
        }
        Ok(Self {
            seed,
            bias,
            label: label.into(),
            rng: ChaCha12Rng::seed_from_u64(seed),
        })
    }

    pub fn unbiased(seed: u64) -> Self {
        Self::new(seed, 0.5, "trng").expect("0.5 is a valid bias")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl Entropy for EntropySource {
    fn fill(&mut self, buf: &mut [u8]) {
        if self.bias == 0.5 {
            self.rng.fill_bytes(buf);
            return;
        }
        for byte in buf.iter_mut() {
            let mut b = 0u8;
            for _ in 0..8 {
                b = (b << 1) | u8::from(self.rng.gen::<f64>() < self.bias);
            }
            *byte = b;
        }
    }
}

/// XOR of several independent sources, sampled in lockstep.
#[derive(Debug, Clone)]
pub struct XorCombiner {
    sources: Vec<EntropySource>,
}

impl XorCombiner {
    pub fn new(sources: Vec<EntropySource>) -> Result<Self, EntropyError> {
        if sources.is_empty() {
            return Err(EntropyError::NoSources);
        }
        Ok(Self { sources })
    }

    pub fn sources(&self) -> &[EntropySource] {
        &self.sources
    }
}

impl Entropy for XorCombiner {
    fn fill(&mut self, buf: &mut [u8]) {
        buf.fill(0);
        let mut scratch = vec![0u8; buf.len()];
        for source in &mut self.sources {
            source.fill(&mut scratch);
            for (out, s) in buf.iter_mut().zip(&scratch) {
                *out ^= s;
            }
        }
    }
}

fn unpack_bits(bytes: &[u8], n_bits: usize) -> Vec<bool> {
    (0..n_bits)
        .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
        .collect()
}

/// Draws `n_bits` bits from `source`, most significant bit of each byte first.
pub fn draw_bits(source: &mut impl Entropy, n_bits: usize) -> Result<Vec<bool>, EntropyError> {
    if n_bits == 0 {
        return Err(EntropyError::ZeroBits);
    }
    let mut bytes = vec![0u8; n_bits.div_ceil(8)];
    source.fill(&mut bytes);
    Ok(unpack_bits(&bytes, n_bits))
}

/// Bitwise XOR of one `n_bits` draw from each source.
pub fn xor_combine(
    sources: &mut [EntropySource],
    n_bits: usize,
) -> Result<Vec<bool>, EntropyError> {
    if sources.is_empty() {
        return Err(EntropyError::NoSources);
    }
    if n_bits == 0 {
        return Err(EntropyError::ZeroBits);
    }
    let mut acc = vec![false; n_bits];
    for source in sources.iter_mut() {
        let bits = draw_bits(source, n_bits)?;
        for (a, b) in acc.iter_mut().zip(bits) {
            *a ^= b;
        }
    }
    Ok(acc)
}

pub fn draw_u128(source: &mut (impl Entropy + ?Sized)) -> [u8; 16] {
    let mut out = [0u8; 16];
    source.fill(&mut out);
    out
}

/// Uniform integer in `[0, bound)` by rejection on 32-bit draws.
pub fn uniform_below(source: &mut (impl Entropy + ?Sized), bound: u32) -> u32 {
    assert!(bound > 0);
    let zone = u32::MAX - (u32::MAX % bound);
    loop {
        let mut b = [0u8; 4];
        source.fill(&mut b);
        let v = u32::from_be_bytes(b);
        if v < zone {
            return v % bound;
        }
    }
}

/// `k` distinct indices in `[0, n)`, in draw order (partial Fisher-Yates).
pub fn sample_distinct(source: &mut (impl Entropy + ?Sized), n: u32, k: u32) -> Vec<u32> {
    assert!(k <= n);
    let mut pool: Vec<u32> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(source, n - i);
        pool.swap(i as usize, j as usize);
    }
    pool.truncate(k as usize);
    pool
}

/// Bias of the XOR of independent bits with the given one-probabilities
/// (piling-up lemma).
pub fn xor_bias(biases: &[f64]) -> f64 {
    let prod: f64 = biases.iter().map(|p| 1.0 - 2.0 * p).product();
    0.5 - 0.5 * prod
}

/// Collision estimates for a random nonce space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEstimate {
    /// `n_prior / 2^bits`: chance one fresh nonce equals one of `n_prior` earlier ones.
    pub per_nonce: f64,
    /// `1 - exp(-n^2 / 2^(bits+1))`: chance of any collision among `n_prior` draws.
    pub birthday: f64,
}

pub fn collision_probability(n_prior: f64, nonce_bits: u32) -> CollisionEstimate {
    assert!(nonce_bits <= 256, "nonce width above 256 bits");
    let space = 2f64.powi(nonce_bits as i32);
    CollisionEstimate {
        per_nonce: n_prior / space,
        birthday: -(-(n_prior * n_prior) / (2.0 * space)).exp_m1(),
    }
}

/// Number of licenses ever issued to a fleet: blocks x chips x licenses/day x years x 365.
pub fn lifetime_license_count(
    blocks_per_chip: f64,
    chips: f64,
    per_block_per_day: f64,
    years: f64,
) -> f64 {
    blocks_per_chip * chips * per_block_per_day * years * 365.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_fraction(bits: &[bool]) -> f64 {
        bits.iter().filter(|b| **b).count() as f64 / bits.len() as f64
    }

    #[test]
    fn full_bias_is_all_ones() {
        let mut s = EntropySource::new(3, 1.0, "stuck").unwrap();
        assert!(draw_bits(&mut s, 128).unwrap().iter().all(|b| *b));
        let mut z = EntropySource::new(3, 0.0, "stuck").unwrap();
        assert!(draw_bits(&mut z, 128).unwrap().iter().all(|b| !*b));
    }

    #[test]
    fn unbiased_fraction_within_three_sigma() {
        // sigma = sqrt(0.25 / 1e6) = 5e-4; 3 sigma = 1.5e-3, well inside the 5e-3 band.
        let mut s = EntropySource::unbiased(11);
        let f = ones_fraction(&draw_bits(&mut s, 1_000_000).unwrap());
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = EntropySource::new(9, 0.3, "a").unwrap();
        let mut b = EntropySource::new(9, 0.3, "b").unwrap();
        assert_eq!(
            draw_bits(&mut a, 500).unwrap(),
            draw_bits(&mut b, 500).unwrap()
        );
    }

    #[test]
    fn clone_forks_stream() {
        let mut a = EntropySource::unbiased(5);
        draw_bits(&mut a, 64).unwrap();
        let mut b = a.clone();
        assert_eq!(
            draw_bits(&mut a, 64).unwrap(),
            draw_bits(&mut b, 64).unwrap()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            EntropySource::new(1, 1.5, "x").unwrap_err(),
            EntropyError::BadBias(1.5)
        );
        assert_eq!(
            draw_bits(&mut EntropySource::unbiased(1), 0).unwrap_err(),
            EntropyError::ZeroBits
        );
        assert_eq!(
            xor_combine(&mut [], 8).unwrap_err(),
            EntropyError::NoSources
        );
        assert!(XorCombiner::new(vec![]).is_err());
    }

    #[test]
    fn xor_with_biased_source_is_unbiased() {
        assert_eq!(xor_bias(&[0.5, 0.9]), 0.5);
        let mut sources = vec![
            EntropySource::unbiased(1),
            EntropySource::new(2, 0.9, "biased").unwrap(),
        ];
        let f = ones_fraction(&xor_combine(&mut sources, 1_000_000).unwrap());
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn xor_of_three_sources() {
        assert_eq!(xor_bias(&[0.9, 0.9, 0.5]), 0.5);
        let mut sources = vec![
            EntropySource::new(1, 0.9, "a").unwrap(),
            EntropySource::new(2, 0.9, "b").unwrap(),
            EntropySource::new(3, 0.5, "c").unwrap(),
        ];
        let f = ones_fraction(&xor_combine(&mut sources, 1_000_000).unwrap());
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn two_biased_sources_follow_piling_up() {
        // 0.5 - 2(0.9-0.5)^2 ... = 0.5 - 0.5*(0.8*0.8) = 0.18
        let predicted = xor_bias(&[0.9, 0.9]);
        assert!((predicted - 0.18).abs() < 1e-12);
        let mut sources = vec![
            EntropySource::new(4, 0.9, "a").unwrap(),
            EntropySource::new(5, 0.9, "b").unwrap(),
        ];
        let f = ones_fraction(&xor_combine(&mut sources, 1_000_000).unwrap());
        let sigma = (predicted * (1.0 - predicted) / 1e6).sqrt();
        assert!((f - predicted).abs() < 3.0 * sigma, "{f} vs {predicted}");
    }

    #[test]
    fn self_xor_is_zero() {
        let mut sources = vec![EntropySource::unbiased(77), EntropySource::unbiased(77)];
        assert!(xor_combine(&mut sources, 4096).unwrap().iter().all(|b| !*b));
        let mut combined = XorCombiner::new(sources).unwrap();
        assert_eq!(draw_u128(&mut combined), [0u8; 16]);
    }

    #[test]
    fn fleet_scale_collision_value() {
        let est = collision_probability(36e12, 128);
        assert!(
            (est.per_nonce - 1.058e-25).abs() / 1.058e-25 < 0.01,
            "{}",
            est.per_nonce
        );
        assert_eq!(collision_probability(0.0, 128).per_nonce, 0.0);
        assert_eq!(collision_probability(0.0, 128).birthday, 0.0);
    }

    #[test]
    fn birthday_matches_small_space_simulation() {
        // 2^8 draws from a 16-bit space: p = 1 - exp(-65536 / 131072) = 0.3935
        let draws = 1u32 << 8;
        let est = collision_probability(draws as f64, 16);
        let trials = 1000;
        let mut src = EntropySource::unbiased(2024);
        let mut hits = 0;
        for _ in 0..trials {
            let mut seen = std::collections::HashSet::new();
            let collided = (0..draws).any(|_| !seen.insert(uniform_below(&mut src, 1 << 16)));
            hits += u32::from(collided);
        }
        let p = est.birthday;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let observed = hits as f64 / trials as f64;
        assert!((observed - p).abs() < 3.0 * sigma, "{observed} vs {p}");

        // 2^16 draws from a 16-bit space collide with certainty.
        let saturated = collision_probability(65536.0, 16).birthday;
        assert!(saturated > 1.0 - 1e-12);
        let all_collide = (0..trials).all(|_| {
            let mut seen = std::collections::HashSet::new();
            (0..65536).any(|_| !seen.insert(uniform_below(&mut src, 1 << 16)))
        });
        assert!(all_collide);
    }

    #[test]
    fn sample_distinct_is_a_permutation_at_full_size() {
        let mut src = EntropySource::unbiased(8);
        let mut v = sample_distinct(&mut src, 100, 100);
        v.sort_unstable();
        assert_eq!(v, (0..100).collect::<Vec<_>>());
    }
}
