// SPDX-License-Identifier: Apache-2.0

//! Alternative security block designs that avoid the TRNG, public-key
//! cryptography, or cryptography altogether.
//!
//! * Counter nonces: the block id concatenated with a one-time-programmable
//!   antifuse counter. No randomness, but one antifuse bit burns per license.
//! * Pre-shared bits: each block holds N secret bits also known to the
//!   authorizer. A challenge names k random positions and the license is
//!   the k bits at those positions. Every license discloses k secret bits,
//!   so the authorizer tracks which positions have been revealed.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::entropy::{sample_distinct, Entropy};
use crate::ids::BlockId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VariantError {
    #[error("antifuse array exhausted after {0} programmed bits")]
    AntifuseExhausted(usize),
    #[error("antifuse programming voltage unavailable")]
    HighVoltageUnavailable,
    #[error("challenge size {k} exceeds secret size {n}")]
    ChallengeTooLarge { k: usize, n: usize },
    #[error("payload has {got} bits, challenge has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("position {0} outside secret")]
    PositionOutOfRange(u16),
}

/// Fixed-length packed bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        let mut b = Self::zeros(len);
        for i in 0..len {
            if rng.gen::<bool>() {
                b.set(i);
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True when every bit set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Bits) -> bool {
        self.len == other.len
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }
}

/// One-time-programmable memory: bits go from 0 to 1 and never back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntifuseArray {
    bits: Bits,
    programmed_count: usize,
}

impl AntifuseArray {
    pub fn new(capacity: usize) -> Self {
        Self {
            bits: Bits::zeros(capacity),
            programmed_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.bits.len()
    }

    /// Number of counter bits burned so far.
    pub fn programmed_count(&self) -> usize {
        self.programmed_count
    }

    pub fn is_programmed(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    pub fn bits(&self) -> &Bits {
        &self.bits
    }

    /// Burns the next counter bit and returns its index.
    pub fn program_next(&mut self) -> Result<usize, VariantError> {
        let i = self.programmed_count;
        if i >= self.capacity() {
            return Err(VariantError::AntifuseExhausted(i));
        }
        self.bits.set(i);
        self.programmed_count += 1;
        Ok(i)
    }
}

/// Counter nonce: `chip_id (8) | block index (4) | counter (4)`, big-endian.
pub fn counter_nonce_value(block: BlockId, counter: u32) -> [u8; 16] {
    let mut v = [0u8; 16];
    v[0..8].copy_from_slice(&block.chip_id.to_be_bytes());
    v[8..12].copy_from_slice(&block.index.to_be_bytes());
    v[12..16].copy_from_slice(&counter.to_be_bytes());
    v
}

/// Issues the next counter nonce, burning exactly one antifuse bit.
pub fn counter_nonce_next(
    block: BlockId,
    antifuse: &mut AntifuseArray,
    high_voltage_available: bool,
) -> Result<[u8; 16], VariantError> {
    if antifuse.programmed_count() >= antifuse.capacity() {
        return Err(VariantError::AntifuseExhausted(antifuse.programmed_count()));
    }
    if !high_voltage_available {
        return Err(VariantError::HighVoltageUnavailable);
    }
    let counter = antifuse.program_next()?;
    Ok(counter_nonce_value(block, counter as u32))
}

/// The authorizer's copy of a block's pre-shared bits plus the ledger of
/// positions already disclosed in licenses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresharedSecret {
    bits: Arc<Bits>,
    revealed: Bits,
}

impl PresharedSecret {
    pub fn new(bits: Bits) -> Self {
        let revealed = Bits::zeros(bits.len());
        Self {
            bits: Arc::new(bits),
            revealed,
        }
    }

    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Self::new(Bits::random(n, &mut rng))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Shared handle to the bits; this is what the block itself stores.
    pub fn bits(&self) -> Arc<Bits> {
        Arc::clone(&self.bits)
    }

    pub fn revealed(&self) -> &Bits {
        &self.revealed
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed.count_ones()
    }
}

/// Positions of the secret a license must disclose.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitChallengeNonce {
    pub positions: Vec<u16>,
}

impl BitChallengeNonce {
    pub fn k(&self) -> usize {
        self.positions.len()
    }

    /// 16-byte echo carried in the license record for this challenge.
    pub fn echo(&self) -> [u8; 16] {
        let mut h = Sha256::new();
        h.update(b"preshared-challenge");
        h.update((self.positions.len() as u16).to_be_bytes());
        for p in &self.positions {
            h.update(p.to_be_bytes());
        }
        h.finalize()[..16].try_into().unwrap()
    }
}

pub fn preshared_challenge(
    n: usize,
    entropy: &mut (impl Entropy + ?Sized),
    k: usize,
) -> Result<BitChallengeNonce, VariantError> {
    if k > n {
        return Err(VariantError::ChallengeTooLarge { k, n });
    }
    assert!(n <= 1 << 16, "positions are 16-bit on the wire");
    let positions = sample_distinct(entropy, n as u32, k as u32)
        .into_iter()
        .map(|p| p as u16)
        .collect();
    Ok(BitChallengeNonce { positions })
}

fn check_positions(n: usize, challenge: &BitChallengeNonce) -> Result<(), VariantError> {
    match challenge.positions.iter().find(|p| **p as usize >= n) {
        Some(p) => Err(VariantError::PositionOutOfRange(*p)),
        None => Ok(()),
    }
}

/// Authorizer side: answers a challenge and records the disclosed positions.
pub fn preshared_issue(
    secret: &mut PresharedSecret,
    challenge: &BitChallengeNonce,
) -> Result<Vec<bool>, VariantError> {
    check_positions(secret.len(), challenge)?;
    let payload = challenge
        .positions
        .iter()
        .map(|p| secret.bits.get(*p as usize))
        .collect();
    for p in &challenge.positions {
        secret.revealed.set(*p as usize);
    }
    Ok(payload)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedVerdict {
    pub accepted: bool,
    /// Simulated seconds the block spent before answering.
    pub elapsed_seconds: f64,
}

/// Block side: every challenged bit must match. The fixed response delay
/// rate-limits online guessing.
pub fn preshared_verify(
    secret: &Bits,
    challenge: &BitChallengeNonce,
    payload: &[bool],
    response_delay: f64,
) -> Result<TimedVerdict, VariantError> {
    if payload.len() != challenge.k() {
        return Err(VariantError::LengthMismatch {
            expected: challenge.k(),
            got: payload.len(),
        });
    }
    check_positions(secret.len(), challenge)?;
    // Fold over every position rather than short-circuiting.
    let mismatches = challenge
        .positions
        .iter()
        .zip(payload)
        .fold(0usize, |acc, (p, b)| {
            acc + usize::from(secret.get(*p as usize) != *b)
        });
    Ok(TimedVerdict {
        accepted: mismatches == 0,
        elapsed_seconds: response_delay,
    })
}

/// Packs bits most-significant-first into `ceil(k / 8)` proof bytes.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, b) in bits.iter().enumerate() {
        if *b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Inverse of [`pack_bits`]; `None` if the length is wrong or padding bits are set.
pub fn unpack_bits(bytes: &[u8], k: usize) -> Option<Vec<bool>> {
    if bytes.len() != k.div_ceil(8) {
        return None;
    }
    let bits: Vec<bool> = (0..bytes.len() * 8)
        .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
        .collect();
    if bits[k..].iter().any(|b| *b) {
        return None;
    }
    Some(bits[..k].to_vec())
}

pub const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceEstimate {
    pub expected_guesses: f64,
    pub expected_seconds: f64,
    pub expected_years: f64,
}

/// Attacker cost to forge one pre-shared-bits license when a fraction
/// `revealed_fraction` of the secret is already known: each of the
/// `k * (1 - f)` expected unknown challenged bits is a fair coin.
pub fn preshared_bruteforce_estimate(
    _n: usize,
    k: usize,
    revealed_fraction: f64,
    delay_seconds: f64,
) -> BruteForceEstimate {
    assert!((0.0..=1.0).contains(&revealed_fraction));
    let expected_guesses = 2f64.powf(k as f64 * (1.0 - revealed_fraction));
    let expected_seconds = expected_guesses * delay_seconds;
    BruteForceEstimate {
        expected_guesses,
        expected_seconds,
        expected_years: expected_seconds / SECONDS_PER_YEAR,
    }
}

/// Disclosed positions after `licenses` challenges of size `k` on an
/// `n`-bit secret: the worst case `licenses * k` (capped at `n`) and the
/// expectation with uniformly random, possibly overlapping challenges.
pub fn revealed_after(n: usize, k: usize, licenses: usize) -> (usize, f64) {
    let worst = (licenses * k).min(n);
    let expected = n as f64 * (1.0 - (1.0 - k as f64 / n as f64).powi(licenses as i32));
    (worst, expected)
}

/// One online forgery attempt sequence against a single pending challenge.
///
/// The attacker knows the positions in the revealed mask (each position is
/// revealed independently with probability `revealed_fraction`), fills
/// those correctly and guesses the rest uniformly at random. Because a
/// rejected license leaves the block's pending challenge in place, every
/// guess targets the same positions. Returns the number of attempts up to
/// and including the first accepted one, capped at `max_attempts`.
pub fn simulate_forgery(
    n: usize,
    k: usize,
    revealed_fraction: f64,
    rng: &mut impl Rng,
    max_attempts: u64,
) -> u64 {
    let secret = PresharedSecret::new(Bits::random(n, rng));
    let known: Vec<bool> = (0..n)
        .map(|_| rng.gen::<f64>() < revealed_fraction)
        .collect();
    let mut entropy = crate::entropy::EntropySource::unbiased(rng.gen());
    let challenge = preshared_challenge(n, &mut entropy, k).expect("k <= n");
    for attempt in 1..=max_attempts {
        let guess: Vec<bool> = challenge
            .positions
            .iter()
            .map(|p| {
                let p = *p as usize;
                if known[p] {
                    secret.bits.get(p)
                } else {
                    rng.gen()
                }
            })
            .collect();
        if preshared_verify(&secret.bits, &challenge, &guess, 0.0)
            .unwrap()
            .accepted
        {
            return attempt;
        }
    }
    max_attempts
}

/// Median attempts over `trials` independent secrets and challenges.
pub fn median_forgery_attempts(
    n: usize,
    k: usize,
    revealed_fraction: f64,
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cap = 1u64 << 40;
    let mut attempts: Vec<u64> = (0..trials)
        .map(|_| simulate_forgery(n, k, revealed_fraction, &mut rng, cap))
        .collect();
    attempts.sort_unstable();
    let mid = attempts.len() / 2;
    if attempts.len().is_multiple_of(2) {
        (attempts[mid - 1] + attempts[mid]) as f64 / 2.0
    } else {
        attempts[mid] as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::EntropySource;
    use proptest::prelude::*;

    #[test]
    fn five_years_of_daily_licenses_fit() {
        let id = BlockId::new(1, 2);
        let mut fuses = AntifuseArray::new(2000);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1825 {
            assert!(seen.insert(counter_nonce_next(id, &mut fuses, true).unwrap()));
        }
        assert_eq!(fuses.programmed_count(), 1825);
    }

    #[test]
    fn exhausts_at_capacity() {
        let id = BlockId::new(1, 2);
        let mut fuses = AntifuseArray::new(2000);
        for _ in 0..2000 {
            counter_nonce_next(id, &mut fuses, true).unwrap();
        }
        assert_eq!(
            counter_nonce_next(id, &mut fuses, true),
            Err(VariantError::AntifuseExhausted(2000))
        );
    }

    #[test]
    fn successive_counter_nonces_differ_in_counter() {
        let id = BlockId::new(0xdead, 7);
        let mut fuses = AntifuseArray::new(4);
        let a = counter_nonce_next(id, &mut fuses, true).unwrap();
        let b = counter_nonce_next(id, &mut fuses, true).unwrap();
        assert_eq!(a[..12], b[..12]);
        assert_eq!(u32::from_be_bytes(a[12..].try_into().unwrap()), 0);
        assert_eq!(u32::from_be_bytes(b[12..].try_into().unwrap()), 1);
    }

    #[test]
    fn no_high_voltage_blocks_counter() {
        let mut fuses = AntifuseArray::new(4);
        assert_eq!(
            counter_nonce_next(BlockId::new(0, 0), &mut fuses, false),
            Err(VariantError::HighVoltageUnavailable)
        );
        assert_eq!(fuses.programmed_count(), 0);
    }

    #[test]
    fn challenge_sizes() {
        let mut src = EntropySource::unbiased(3);
        let c = preshared_challenge(10_000, &mut src, 50).unwrap();
        let mut sorted = c.positions.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        assert!(sorted.iter().all(|p| (*p as usize) < 10_000));

        let all = preshared_challenge(64, &mut src, 64).unwrap();
        let mut sorted = all.positions.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<u16>>());

        assert_eq!(
            preshared_challenge(10, &mut src, 11),
            Err(VariantError::ChallengeTooLarge { k: 11, n: 10 })
        );
    }

    #[test]
    fn challenge_reproducible_under_seed() {
        let a = preshared_challenge(10_000, &mut EntropySource::unbiased(5), 50).unwrap();
        let b = preshared_challenge(10_000, &mut EntropySource::unbiased(5), 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hundred_monthly_licenses_reveal_at_most_5000() {
        let mut secret = PresharedSecret::random(10_000, 1);
        let mut src = EntropySource::unbiased(2);
        for _ in 0..100 {
            let c = preshared_challenge(10_000, &mut src, 50).unwrap();
            preshared_issue(&mut secret, &c).unwrap();
        }
        let (worst, expected) = revealed_after(10_000, 50, 100);
        assert_eq!(worst, 5000);
        assert!(secret.revealed_count() <= 5000);
        // 10000 * (1 - 0.995^100) = 3942.3; sd is about 24.
        assert!((expected - 3942.3).abs() < 0.5, "{expected}");
        assert!((secret.revealed_count() as f64 - expected).abs() < 150.0);
    }

    #[test]
    fn repeated_challenge_reveals_nothing_new() {
        let mut secret = PresharedSecret::random(1000, 4);
        let c = preshared_challenge(1000, &mut EntropySource::unbiased(9), 50).unwrap();
        preshared_issue(&mut secret, &c).unwrap();
        let before = secret.revealed().clone();
        preshared_issue(&mut secret, &c).unwrap();
        assert_eq!(secret.revealed(), &before);
    }

    #[test]
    fn single_bit_challenge() {
        let mut secret = PresharedSecret::random(100, 4);
        let c = BitChallengeNonce {
            positions: vec![37],
        };
        let payload = preshared_issue(&mut secret, &c).unwrap();
        assert_eq!(payload, vec![secret.bits().get(37)]);
    }

    #[test]
    fn verify_accepts_exact_and_rejects_flip() {
        let mut secret = PresharedSecret::random(500, 6);
        let c = preshared_challenge(500, &mut EntropySource::unbiased(1), 20).unwrap();
        let mut payload = preshared_issue(&mut secret, &c).unwrap();
        let ok = preshared_verify(&secret.bits(), &c, &payload, 1.0).unwrap();
        assert!(ok.accepted);
        assert_eq!(ok.elapsed_seconds, 1.0);
        payload[7] = !payload[7];
        assert!(
            !preshared_verify(&secret.bits(), &c, &payload, 1.0)
                .unwrap()
                .accepted
        );
        assert_eq!(
            preshared_verify(&secret.bits(), &c, &payload[..3], 1.0),
            Err(VariantError::LengthMismatch {
                expected: 20,
                got: 3
            })
        );
    }

    #[test]
    fn fleet_scale_bruteforce_estimate() {
        let e = preshared_bruteforce_estimate(10_000, 50, 0.5, 1.0);
        assert_eq!(e.expected_guesses, 33_554_432.0);
        assert_eq!(e.expected_seconds, 33_554_432.0);
        assert!(
            (e.expected_years - 1.063).abs() < 0.001,
            "{}",
            e.expected_years
        );
        assert_eq!(
            preshared_bruteforce_estimate(10_000, 50, 1.0, 1.0).expected_guesses,
            1.0
        );
    }

    /// Independent oracle: with each position revealed with probability f,
    /// the unknown count U among k challenged bits is Binomial(k, 1-f) and
    /// attempts are Geometric(2^-U). The median is the smallest t with
    /// sum_u P(U=u) (1 - (1 - 2^-u)^t) >= 1/2.
    fn oracle_median(k: usize, f: f64) -> u64 {
        let binom = |n: usize, r: usize| -> f64 {
            (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let pmf: Vec<f64> = (0..=k)
            .map(|u| binom(k, u) * (1.0 - f).powi(u as i32) * f.powi((k - u) as i32))
            .collect();
        (1u64..)
            .find(|t| {
                let cdf: f64 = pmf
                    .iter()
                    .enumerate()
                    .map(|(u, p)| p * (1.0 - (1.0 - 2f64.powi(-(u as i32))).powi(*t as i32)))
                    .sum();
                cdf >= 0.5
            })
            .unwrap()
    }

    #[test]
    fn oracle_median_frozen_values() {
        // Frozen from the oracle above; N does not enter the model.
        assert_eq!(oracle_median(6, 0.0), 45);
        assert_eq!(oracle_median(6, 0.25), 15);
        assert_eq!(oracle_median(6, 0.5), 5);
    }

    #[test]
    fn simulation_tracks_oracle_at_desk_scale() {
        for (f, frozen) in [(0.0, 45.0), (0.25, 15.0), (0.5, 5.0)] {
            let median = median_forgery_attempts(24, 6, f, 1000, 17);
            // Sampling error of a 1000-trial median is a few percent here.
            assert!(
                median >= frozen * 0.75 && median <= frozen * 1.33,
                "f={f}: {median} vs {frozen}"
            );
            let analytic = preshared_bruteforce_estimate(24, 6, f, 1.0).expected_guesses;
            assert!(median / analytic >= 0.5 && median / analytic <= 2.0);
        }
    }

    #[test]
    fn estimate_within_factor_two_over_small_grid() {
        for n in [8usize, 16, 24, 32] {
            for k in 1..=8usize.min(n) {
                for f in [0.0, 0.25, 0.5] {
                    let median = median_forgery_attempts(n, k, f, 1000, (n * 100 + k) as u64);
                    let analytic = preshared_bruteforce_estimate(n, k, f, 1.0).expected_guesses;
                    let ratio = median / analytic;
                    assert!(
                        (0.5..=2.0).contains(&ratio),
                        "n={n} k={k} f={f}: {median} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn pack_round_trip() {
        let bits = vec![true, false, true, true, false, false, true, false, true];
        let packed = pack_bits(&bits);
        assert_eq!(packed, vec![0b1011_0010, 0b1000_0000]);
        assert_eq!(unpack_bits(&packed, 9).unwrap(), bits);
        assert!(unpack_bits(&packed, 8).is_none());
        assert!(unpack_bits(&[0b1011_0010, 0b1000_0001], 9).is_none());
    }

    proptest! {
        #[test]
        fn antifuse_bits_never_clear(ops in proptest::collection::vec(0u8..3, 0..200)) {
            let mut fuses = AntifuseArray::new(64);
            let mut prev = fuses.bits().clone();
            let mut prev_count = 0;
            for op in ops {
                match op {
                    0 => { let _ = fuses.program_next(); }
                    1 => { let _ = counter_nonce_next(BlockId::new(1, 1), &mut fuses, true); }
                    _ => { let _ = counter_nonce_next(BlockId::new(1, 1), &mut fuses, false); }
                }
                prop_assert!(prev.is_subset_of(fuses.bits()));
                prop_assert!(fuses.programmed_count() >= prev_count);
                prev = fuses.bits().clone();
                prev_count = fuses.programmed_count();
            }
        }

        #[test]
        fn revealed_ledger_bounded(licenses in 0usize..40, k in 1usize..20, seed in any::<u64>()) {
            let mut secret = PresharedSecret::random(200, seed);
            let mut src = EntropySource::unbiased(seed);
            let mut prev = secret.revealed().clone();
            for _ in 0..licenses {
                let c = preshared_challenge(200, &mut src, k).unwrap();
                preshared_issue(&mut secret, &c).unwrap();
                prop_assert!(prev.is_subset_of(secret.revealed()));
                prev = secret.revealed().clone();
            }
            prop_assert!(secret.revealed_count() <= licenses * k);
        }
    }
}
