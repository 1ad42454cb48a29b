// SPDX-License-Identifier: Apache-2.0

//! Adversary campaigns against a provisioned fleet.
//!
//! The attacker knows the design, every topology and every public key. It
//! does not know private keys, symmetric secrets it has not scanned, or
//! unrevealed pre-shared bits. Campaigns work on copies of the chips they
//! attack unless stated otherwise, and are deterministic under their seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::authorizer::{derive_seed, Authorizer};
use crate::block::{License, Nonce, NonceValue, SecurityBlockState, VerifierMaterial, VerifyFault};
use crate::chip::{
    attempt_circuit_edit, audit_bypass, find_open_path, route_packet, EditCampaignState, EditModel,
    RouteOutcome,
};
use crate::crypto::{mac_tag, LicensePayload, SchemeId};
use crate::entropy::EntropySource;
use crate::fleet::{Chip, Fleet};
use crate::ids::{BatchId, BlockId, BlockKind};
use crate::variants::{
    pack_bits, preshared_bruteforce_estimate, preshared_issue, Bits, PresharedSecret,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub campaign: String,
    pub attempts: u64,
    pub successes: u64,
    pub blocks_defeated: u64,
    /// Whether the attacker ends up with a chip that runs workloads without licenses.
    pub chip_functional: bool,
    /// Attacker time under the campaign's cost model.
    pub wall_model_seconds: f64,
    pub notes: String,
}

impl AttackReport {
    fn new(campaign: impl Into<String>) -> Self {
        Self {
            campaign: campaign.into(),
            attempts: 0,
            successes: 0,
            blocks_defeated: 0,
            chip_functional: false,
            wall_model_seconds: 0.0,
            notes: String::new(),
        }
    }

    /// Sums two partial reports of the same campaign.
    pub fn merge(mut self, other: &AttackReport) -> Self {
        self.attempts += other.attempts;
        self.successes += other.successes;
        self.blocks_defeated += other.blocks_defeated;
        self.chip_functional |= other.chip_functional;
        self.wall_model_seconds += other.wall_model_seconds;
        if !other.notes.is_empty() {
            if !self.notes.is_empty() {
                self.notes.push_str("; ");
            }
            self.notes.push_str(&other.notes);
        }
        self
    }

    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }

    pub const CSV_HEADER: &'static str =
        "campaign,attempts,successes,blocks_defeated,chip_functional,wall_model_seconds,notes";

    pub fn csv_row(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_owned()
            }
        };
        format!(
            "{},{},{},{},{},{},{}",
            quote(&self.campaign),
            self.attempts,
            self.successes,
            self.blocks_defeated,
            self.chip_functional,
            self.wall_model_seconds,
            quote(&self.notes)
        )
    }
}

fn chip_index(fleet: &Fleet, chip_id: u64) -> Option<usize> {
    fleet.chips.iter().position(|c| c.chip_id() == chip_id)
}

/// True if some path through the chip runs with all gates open, checked by
/// routing a real packet along it.
fn chip_unlocked(chip: &mut Chip) -> bool {
    let Some(path) = find_open_path(&chip.topology, &chip.blocks, &chip.edits.collateral_damage)
    else {
        return false;
    };
    let packet = chip.topology.packet_for(&path, b"probe".to_vec());
    matches!(
        route_packet(
            &chip.topology,
            &mut chip.blocks,
            &chip.edits.collateral_damage,
            &packet
        ),
        Ok(RouteOutcome::Delivered { .. })
    )
}

/// Re-applies captured licenses to live blocks of `fleet`. With
/// `cross_chip`, each license is aimed at the same block index on a
/// different chip.
pub fn replay_campaign(
    fleet: &mut Fleet,
    captured: &[License],
    trials: u64,
    cross_chip: bool,
    kind: Option<BlockKind>,
    seed: u64,
) -> AttackReport {
    let mut report = AttackReport::new(match (cross_chip, kind) {
        (true, _) => "replay_cross_chip".to_owned(),
        (false, Some(k)) => format!("replay_{k}"),
        (false, None) => "replay".to_owned(),
    });
    let pool: Vec<&License> = captured
        .iter()
        .filter(|l| {
            let Some(ci) = chip_index(fleet, l.block.chip_id) else {
                return false;
            };
            kind.is_none_or(|k| {
                fleet.chips[ci]
                    .blocks
                    .get(l.block.index as usize)
                    .is_some_and(|b| b.kind() == k)
            })
        })
        .collect();
    if pool.is_empty() {
        report.notes = "no captured licenses".into();
        return report;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut entropy = EntropySource::unbiased(derive_seed(seed, &[1]));
    let mut defeated = BTreeSet::new();
    for _ in 0..trials {
        let lic = pool[rng.gen_range(0..pool.len())];
        let mut ci = chip_index(fleet, lic.block.chip_id).expect("filtered");
        if cross_chip && fleet.chips.len() > 1 {
            ci = (ci + rng.gen_range(1..fleet.chips.len())) % fleet.chips.len();
        }
        let Some(block) = fleet.chips[ci].blocks.get_mut(lic.block.index as usize) else {
            continue;
        };
        if block.pending_nonce().is_none() {
            // Legitimate operation keeps a challenge outstanding.
            let _ = block.issue_challenge(&mut entropy, 0);
        }
        report.attempts += 1;
        if let Ok(granted) = block.apply_license(lic, 0) {
            if granted > 0 {
                report.successes += 1;
                defeated.insert(block.id());
            }
        }
    }
    report.blocks_defeated = defeated.len() as u64;
    report.chip_functional = report.successes > 0;
    let _ = write!(report.notes, "{} captured licenses", pool.len());
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlitchModel {
    /// Chance one glitch flips one verification outcome.
    pub p_flip: f64,
    /// Chance the block's glitch detector trips on a glitch.
    #[serde(default)]
    pub detector_p: f64,
    #[serde(default)]
    pub timing_randomized: bool,
    /// With randomized timing, fraction of blocks one pulse lands on.
    #[serde(default = "full_coverage")]
    pub pulse_coverage: f64,
}

fn full_coverage() -> f64 {
    1.0
}

impl GlitchModel {
    pub fn new(p_flip: f64) -> Self {
        Self {
            p_flip,
            detector_p: 0.0,
            timing_randomized: false,
            pulse_coverage: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_flip", self.p_flip),
            ("detector_p", self.detector_p),
            ("pulse_coverage", self.pulse_coverage),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn glitch_trial(targets: &[SecurityBlockState], model: &GlitchModel, seed: u64) -> (bool, u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut entropy = EntropySource::unbiased(seed);
    let mut defeated = 0;
    for t in targets {
        let mut block = t.power_cycle();
        let Ok(nonce) = block.issue_challenge(&mut entropy, 0) else {
            return (false, defeated);
        };
        let forged = License {
            block: block.id(),
            batch: block.batch(),
            nonce_echo: nonce.echo(),
            grant_ops: u32::MAX,
            expiry: u64::MAX,
            proof: vec![0; 64],
        };
        let covered = !model.timing_randomized || rng.gen::<f64>() < model.pulse_coverage;
        let flip = covered && rng.gen::<f64>() < model.p_flip;
        let trip = covered && rng.gen::<f64>() < model.detector_p;
        let fault = if flip {
            VerifyFault::FlipProofCheck
        } else {
            VerifyFault::None
        };
        let accepted = block.apply_license_with_fault(&forged, 0, fault).is_ok();
        if trip {
            block.trip_glitch_detector();
        }
        if !(accepted && block.remaining_ops() > 0) {
            return (false, defeated);
        }
        defeated += 1;
    }
    (true, defeated)
}

/// Per trial the attacker glitches every target's license check once,
/// submitting a garbage proof. The trial succeeds only if every target
/// ends up with allowance. Trials run in parallel with per-trial seeds.
pub fn glitch_campaign(
    targets: &[SecurityBlockState],
    model: &GlitchModel,
    trials: u64,
    seed: u64,
) -> AttackReport {
    let (successes, defeated) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (ok, d) = glitch_trial(targets, model, derive_seed(seed, &[t]));
            (u64::from(ok), d)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mut report = AttackReport::new(format!("glitch_b{}", targets.len()));
    report.attempts = trials;
    report.successes = successes;
    report.blocks_defeated = defeated;
    report.chip_functional = successes > 0;
    let p = model.p_flip
        * (1.0 - model.detector_p)
        * if model.timing_randomized {
            model.pulse_coverage
        } else {
            1.0
        };
    let _ = write!(
        report.notes,
        "per-block p={p}, expected rate {:e}",
        p.powi(targets.len() as i32)
    );
    report
}

/// `n` glitch targets drawn from the fleet's blocks, cycling if the fleet has fewer.
pub fn glitch_targets(fleet: &Fleet, n: usize) -> Vec<SecurityBlockState> {
    fleet
        .chips
        .iter()
        .flat_map(|c| c.blocks.iter())
        .cycle()
        .take(n)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditStrategy {
    /// Every gate on the path with the fewest gates.
    CheapestPath,
    /// `count` distinct blocks chosen uniformly.
    Random {
        count: usize,
    },
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditParams {
    pub model: EditModel,
    pub strategy: EditStrategy,
    /// Attempts per target before giving up on it.
    #[serde(default = "one_attempt")]
    pub max_attempts_per_block: u32,
    #[serde(default = "hour")]
    pub seconds_per_edit: f64,
}

fn one_attempt() -> u32 {
    1
}

fn hour() -> f64 {
    3600.0
}

/// Circuit edits on an unlicensed copy of `chip`.
pub fn edit_campaign(chip: &Chip, params: &EditParams, seed: u64) -> AttackReport {
    let mut chip = chip.clone();
    chip.power_cycle();
    chip.edits = EditCampaignState::default();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let audit = audit_bypass(&chip.topology).ok();
    let placed: Vec<BlockId> = chip
        .topology
        .edges()
        .iter()
        .flat_map(|e| e.gates.iter().copied())
        .collect();
    let targets: Vec<BlockId> = match params.strategy {
        EditStrategy::CheapestPath => audit
            .as_ref()
            .map(|a| {
                a.cheapest_path
                    .iter()
                    .flat_map(|&e| chip.topology.edges()[e].gates.iter().copied())
                    .collect()
            })
            .unwrap_or_default(),
        EditStrategy::Random { count } => placed
            .choose_multiple(&mut rng, count.min(placed.len()))
            .copied()
            .collect(),
        EditStrategy::All => placed.clone(),
    };
    for id in &targets {
        for _ in 0..params.max_attempts_per_block.max(1) {
            attempt_circuit_edit(
                &chip.topology,
                &mut chip.blocks,
                *id,
                &params.model,
                &mut rng,
                &mut chip.edits,
            )
            .expect("targets are placed on this chip");
            if chip.edits.blocks_bypassed.contains(id) {
                break;
            }
        }
    }
    let name = match params.strategy {
        EditStrategy::CheapestPath => "edit_cheapest_path".to_owned(),
        EditStrategy::Random { count } => format!("edit_random_{count}"),
        EditStrategy::All => "edit_all".to_owned(),
    };
    let mut report = AttackReport::new(name);
    report.attempts = chip.edits.edits_attempted;
    report.successes = chip.edits.blocks_bypassed.len() as u64;
    report.blocks_defeated = report.successes;
    report.wall_model_seconds = report.attempts as f64 * params.seconds_per_edit;
    report.chip_functional = chip_unlocked(&mut chip);
    let _ = write!(
        report.notes,
        "targets {}, minimum gates on any path {}, damaged switches {}",
        targets.len(),
        audit.map_or(0, |a| a.min_gates_on_any_path),
        chip.edits.collateral_damage.len()
    );
    report
}

/// Secret material an invasive scan of one block yields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Loot {
    MacKey([u8; 32]),
    Preshared(Vec<bool>),
}

fn scan(block: &SecurityBlockState) -> Option<Loot> {
    match block.verifier() {
        VerifierMaterial::Signature(_) => None,
        VerifierMaterial::Symmetric(k) => Some(Loot::MacKey(k.secret)),
        VerifierMaterial::Preshared { bits, .. } => Some(Loot::Preshared(
            (0..bits.len()).map(|i| bits.get(i)).collect(),
        )),
    }
}

fn forge_with_loot(loot: &Loot, batch: BatchId, nonce: &Nonce) -> Option<License> {
    let (proof, echo) = match (loot, &nonce.value) {
        (Loot::MacKey(key), NonceValue::Wide(echo)) => {
            let payload = LicensePayload {
                batch,
                block: nonce.block,
                nonce_echo: *echo,
                grant_ops: u32::MAX,
                expiry: u64::MAX,
            };
            (mac_tag(key, &payload.encode()).ok()?.to_vec(), *echo)
        }
        (Loot::Preshared(bits), NonceValue::Positions(ch)) => {
            let mut b = Bits::zeros(bits.len());
            bits.iter()
                .enumerate()
                .filter(|(_, v)| **v)
                .for_each(|(i, _)| b.set(i));
            let mut secret = PresharedSecret::new(b);
            (
                pack_bits(&preshared_issue(&mut secret, ch).ok()?),
                ch.echo(),
            )
        }
        _ => return None,
    };
    Some(License {
        block: nonce.block,
        batch,
        nonce_echo: echo,
        grant_ops: u32::MAX,
        expiry: u64::MAX,
        proof,
    })
}

/// Scans `blocks_scanned_per_day` random blocks a day for `days`, then
/// tries every extracted secret against every block of a fresh copy of
/// the fleet. A block counts as forgeable only if a forged license is
/// actually accepted.
pub fn extraction_campaign(
    fleet: &Fleet,
    blocks_scanned_per_day: u64,
    days: u64,
    seed: u64,
) -> AttackReport {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let all: Vec<(usize, usize)> = fleet
        .chips
        .iter()
        .enumerate()
        .flat_map(|(c, chip)| (0..chip.blocks.len()).map(move |b| (c, b)))
        .collect();
    let budget = blocks_scanned_per_day
        .saturating_mul(days)
        .min(all.len() as u64) as usize;
    let scanned: Vec<(usize, usize)> = all.choose_multiple(&mut rng, budget).copied().collect();
    let loot: BTreeSet<Loot> = scanned
        .iter()
        .filter_map(|&(c, b)| scan(&fleet.chips[c].blocks[b]))
        .collect();

    let mut entropy = EntropySource::unbiased(derive_seed(seed, &[1]));
    let mut forgeable = 0u64;
    let mut any_unlocked = false;
    for chip in &fleet.chips {
        let mut chip = chip.clone();
        chip.power_cycle();
        let batch = chip.batch;
        for block in chip.blocks.iter_mut() {
            if loot.is_empty() {
                break;
            }
            let Ok(nonce) = block.issue_challenge(&mut entropy, 0) else {
                continue;
            };
            let ok = loot
                .iter()
                .filter_map(|l| forge_with_loot(l, batch, &nonce))
                .any(|lic| block.apply_license(&lic, 0).is_ok());
            forgeable += u64::from(ok);
        }
        any_unlocked |= chip_unlocked(&mut chip);
    }
    let mut report = AttackReport::new("extraction");
    report.attempts = budget as u64;
    report.successes = forgeable;
    report.blocks_defeated = forgeable;
    report.chip_functional = any_unlocked;
    report.wall_model_seconds = days as f64 * 86_400.0;
    let _ = write!(
        report.notes,
        "scanned {budget} of {} blocks, {} distinct secrets, {forgeable} forgeable",
        all.len(),
        loot.len()
    );
    report
}

/// Forges licenses for every signature block of `broken_scheme`, as if the
/// scheme were cryptanalysed (modelled by handing the attacker the private
/// keys). Pre-shared-bit blocks are costed with the brute-force model
/// instead of being attacked.
pub fn forgery_campaign(fleet: &Fleet, broken_scheme: Option<SchemeId>, seed: u64) -> AttackReport {
    let mut entropy = EntropySource::unbiased(seed);
    let mut report = AttackReport::new(match broken_scheme {
        Some(s) => format!("forgery_{s}"),
        None => "forgery_none".to_owned(),
    });
    let mut unlocked = 0usize;
    let mut preshared_seconds = 0.0f64;
    let mut preshared_blocks = 0usize;
    for original in &fleet.chips {
        let mut chip = original.clone();
        chip.power_cycle();
        for i in 0..chip.blocks.len() {
            let block = &mut chip.blocks[i];
            if let VerifierMaterial::Preshared { bits, k, .. } = block.verifier() {
                let revealed = fleet.authorizer.preshared_revealed(block.id()).unwrap_or(0);
                let f = revealed as f64 / bits.len() as f64;
                let est =
                    preshared_bruteforce_estimate(bits.len(), *k, f, block.response_delay_secs());
                preshared_seconds = preshared_seconds.max(est.expected_seconds);
                preshared_blocks += 1;
                continue;
            }
            let Some(scheme) = original.scheme_of(i as u32) else {
                continue;
            };
            if Some(scheme) != broken_scheme {
                continue;
            }
            let Ok(key) = fleet.authorizer.keyring().steal_key(chip.batch, scheme) else {
                continue;
            };
            let Ok(nonce) = block.issue_challenge(&mut entropy, 0) else {
                continue;
            };
            report.attempts += 1;
            let lic = Authorizer::forge_with_key(
                &key,
                chip.batch,
                block.id(),
                nonce.echo(),
                u32::MAX,
                u64::MAX,
            );
            if block.apply_license(&lic, 0).is_ok() {
                report.successes += 1;
            }
        }
        unlocked += usize::from(chip_unlocked(&mut chip));
    }
    report.blocks_defeated = report.successes;
    report.chip_functional = unlocked > 0;
    report.wall_model_seconds = preshared_seconds;
    let _ = write!(
        report.notes,
        "{unlocked} of {} chips unlocked",
        fleet.chips.len()
    );
    if preshared_blocks > 0 {
        let _ = write!(
            report.notes,
            ", pre-shared brute force {:.3e} s per block",
            preshared_seconds
        );
    }
    report
}

/// Steals every signing key of one batch and forges against the whole fleet.
pub fn key_theft_campaign(fleet: &Fleet, batch: BatchId, seed: u64) -> AttackReport {
    let mut entropy = EntropySource::unbiased(seed);
    let mut report = AttackReport::new(format!("key_theft_batch{}", batch.0));
    let keys: Vec<_> = fleet
        .authorizer
        .keyring()
        .schemes(batch)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|s| {
            fleet
                .authorizer
                .keyring()
                .steal_key(batch, s)
                .ok()
                .map(|k| (s, k))
        })
        .collect();
    let (mut inside, mut outside) = ((0u64, 0u64), (0u64, 0u64));
    let mut unlocked = 0;
    for original in &fleet.chips {
        let mut chip = original.clone();
        chip.power_cycle();
        for i in 0..chip.blocks.len() {
            let Some(scheme) = original.scheme_of(i as u32) else {
                continue;
            };
            let Some((_, key)) = keys.iter().find(|(s, _)| *s == scheme) else {
                continue;
            };
            let block = &mut chip.blocks[i];
            let Ok(nonce) = block.issue_challenge(&mut entropy, 0) else {
                continue;
            };
            // Stamp the victim's batch; only the key decides.
            let lic = Authorizer::forge_with_key(
                key,
                chip.batch,
                block.id(),
                nonce.echo(),
                u32::MAX,
                u64::MAX,
            );
            let ok = u64::from(block.apply_license(&lic, 0).is_ok());
            let bucket = if chip.batch == batch {
                &mut inside
            } else {
                &mut outside
            };
            bucket.0 += 1;
            bucket.1 += ok;
        }
        unlocked += usize::from(chip_unlocked(&mut chip));
    }
    report.attempts = inside.0 + outside.0;
    report.successes = inside.1 + outside.1;
    report.blocks_defeated = report.successes;
    report.chip_functional = unlocked > 0;
    let _ = write!(
        report.notes,
        "own batch {}/{} forged, other batches {}/{} forged, {unlocked} chips unlocked",
        inside.1, inside.0, outside.1, outside.0
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authorizer::IssuancePolicy;
    use crate::block::PlantedFlaw;
    use crate::fleet::tests::small_fleet;
    use crate::fleet::VariantMix;
    use crate::transport::{collector_deliver, collector_gather};

    /// Licenses every block once and returns the licenses it accepted.
    fn license_all(fleet: &mut Fleet) -> Vec<License> {
        let mut captured = vec![];
        let policy = IssuancePolicy::fixed(100, 86_400);
        let shares: Vec<String> = fleet.shares.clone();
        let shares: Vec<&str> = shares.iter().map(String::as_str).collect();
        let mut src = EntropySource::unbiased(1);
        for chip in &mut fleet.chips {
            let (nb, _) = collector_gather(chip.chip_id(), &mut chip.blocks, &mut src, 0);
            let (lb, _) = fleet
                .authorizer
                .issue_licenses(&policy, &nb, 0, &shares)
                .unwrap();
            let m = collector_deliver(&lb, &mut chip.blocks, 0);
            assert_eq!(m.accepted, chip.blocks.len());
            captured.extend(lb.licenses());
        }
        captured
    }

    fn mixed() -> VariantMix {
        VariantMix {
            ecdsa_trng: 0.25,
            counter_nonce: 0.25,
            symmetric_mac: 0.25,
            preshared_bits: 0.25,
        }
    }

    #[test]
    fn replays_never_succeed() {
        let mut fleet = small_fleet(2, mixed(), SchemeId::ALL.to_vec(), 2);
        let captured = license_all(&mut fleet);
        for kind in BlockKind::ALL {
            let r = replay_campaign(&mut fleet, &captured, 2000, false, Some(kind), 3);
            assert_eq!(r.attempts, 2000);
            assert_eq!(r.successes, 0, "{kind}");
        }
        let r = replay_campaign(&mut fleet, &captured, 2000, true, None, 4);
        assert_eq!(r.successes, 0);
    }

    #[test]
    fn replay_control_detects_backdoor() {
        let mut fleet = small_fleet(
            1,
            VariantMix::only(BlockKind::SymmetricMac),
            vec![SchemeId::EcdsaP256],
            1,
        );
        let captured = license_all(&mut fleet);
        fleet.plant_flaw(PlantedFlaw::SkipNonceCheck);
        let r = replay_campaign(&mut fleet, &captured, 500, false, None, 3);
        assert_eq!(r.successes, 500);
        assert!(r.chip_functional);
    }

    #[test]
    fn replay_without_capture() {
        let mut fleet = small_fleet(1, mixed(), vec![SchemeId::EcdsaP256], 1);
        let r = replay_campaign(&mut fleet, &[], 10, false, None, 3);
        assert_eq!(r.attempts, 0);
    }

    #[test]
    fn glitch_single_block_rate() {
        let fleet = small_fleet(
            1,
            VariantMix::only(BlockKind::SymmetricMac),
            vec![SchemeId::EcdsaP256],
            1,
        );
        let targets = glitch_targets(&fleet, 1);
        let trials = 20_000;
        let r = glitch_campaign(&targets, &GlitchModel::new(0.3), trials, 9);
        let sigma = (0.3f64 * 0.7 / trials as f64).sqrt();
        assert!(
            (r.success_rate() - 0.3).abs() < 3.0 * sigma,
            "{}",
            r.success_rate()
        );
        // Detector always trips: nothing survives.
        let always = GlitchModel {
            detector_p: 1.0,
            ..GlitchModel::new(1.0)
        };
        assert_eq!(glitch_campaign(&targets, &always, 100, 9).successes, 0);
        // Narrow pulses cover half the blocks.
        let narrow = GlitchModel {
            timing_randomized: true,
            pulse_coverage: 0.5,
            ..GlitchModel::new(1.0)
        };
        let r = glitch_campaign(&targets, &narrow, trials, 10);
        let sigma = (0.25f64 / trials as f64).sqrt();
        assert!((r.success_rate() - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn glitch_is_deterministic_and_large_b_fails() {
        let fleet = small_fleet(1, mixed(), SchemeId::ALL.to_vec(), 2);
        let targets = glitch_targets(&fleet, 3);
        let a = glitch_campaign(&targets, &GlitchModel::new(0.3), 3000, 1);
        let b = glitch_campaign(&targets, &GlitchModel::new(0.3), 3000, 1);
        assert_eq!(a, b);
        let many = glitch_targets(&fleet, 1000);
        assert_eq!(many.len(), 1000);
        assert_eq!(
            glitch_campaign(&many, &GlitchModel::new(0.5), 200, 2).successes,
            0
        );
        assert!(GlitchModel::new(1.2).validate().is_err());
    }

    #[test]
    fn edit_strategies() {
        let fleet = small_fleet(1, mixed(), vec![SchemeId::EcdsaP256], 2);
        let ideal = EditModel::new(1.0, 0.0).unwrap();
        let p = |strategy| EditParams {
            model: ideal,
            strategy,
            max_attempts_per_block: 1,
            seconds_per_edit: 10.0,
        };
        let cut = edit_campaign(&fleet.chips[0], &p(EditStrategy::CheapestPath), 1);
        assert!(cut.chip_functional);
        assert_eq!(cut.successes, 6);
        assert_eq!(cut.wall_model_seconds, 60.0);
        let few = edit_campaign(&fleet.chips[0], &p(EditStrategy::Random { count: 1 }), 1);
        assert!(!few.chip_functional);
        let all = edit_campaign(&fleet.chips[0], &p(EditStrategy::All), 1);
        assert!(all.chip_functional);
        assert_eq!(all.successes as usize, fleet.chips[0].blocks.len());
        let damaging = EditParams {
            model: EditModel::new(1.0, 1.0).unwrap(),
            ..p(EditStrategy::All)
        };
        assert!(!edit_campaign(&fleet.chips[0], &damaging, 1).chip_functional);
    }

    #[test]
    fn extraction_asymmetry() {
        let asym = small_fleet(
            3,
            VariantMix::only(BlockKind::EcdsaTrng),
            SchemeId::ALL.to_vec(),
            2,
        );
        let r = extraction_campaign(&asym, 1000, 1000, 1);
        assert_eq!(r.attempts as usize, asym.block_count());
        assert_eq!(r.successes, 0);
        assert!(!r.chip_functional);

        let sym = small_fleet(
            3,
            VariantMix::only(BlockKind::SymmetricMac),
            vec![SchemeId::EcdsaP256],
            2,
        );
        let r = extraction_campaign(&sym, 5, 2, 1);
        assert_eq!(r.attempts, 10);
        assert_eq!(r.successes, 10);

        let pre = small_fleet(
            1,
            VariantMix::only(BlockKind::PresharedBits),
            vec![SchemeId::EcdsaP256],
            1,
        );
        let r = extraction_campaign(&pre, 1, 1, 1);
        assert_eq!(r.successes, 1);
    }

    #[test]
    fn scheme_diversity() {
        let dual = small_fleet(
            2,
            VariantMix::only(BlockKind::EcdsaTrng),
            SchemeId::ALL.to_vec(),
            2,
        );
        let r = forgery_campaign(&dual, Some(SchemeId::AltSignature), 1);
        assert_eq!(r.successes, r.attempts);
        assert!(r.successes > 0);
        assert!(!r.chip_functional);
        let single = small_fleet(
            2,
            VariantMix::only(BlockKind::EcdsaTrng),
            vec![SchemeId::AltSignature],
            2,
        );
        assert!(forgery_campaign(&single, Some(SchemeId::AltSignature), 1).chip_functional);
        assert!(!forgery_campaign(&single, Some(SchemeId::EcdsaP256), 1).chip_functional);
        assert_eq!(forgery_campaign(&single, None, 1).attempts, 0);
    }

    #[test]
    fn key_theft_blast_radius() {
        let fleet = small_fleet(
            4,
            VariantMix::only(BlockKind::EcdsaTrng),
            vec![SchemeId::AltSignature],
            1,
        );
        let r = key_theft_campaign(&fleet, BatchId(1), 1);
        let per_chip = fleet.chips[0].blocks.len() as u64;
        assert_eq!(r.successes, 2 * per_chip);
        assert_eq!(r.attempts, 4 * per_chip);
        assert!(r.notes.contains("other batches 0/"));
    }

    #[test]
    fn csv_quoting_and_merge() {
        let mut a = AttackReport::new("x");
        a.notes = "a, \"b\"".into();
        assert!(a.csv_row().ends_with("\"a, \"\"b\"\"\""));
        let merged = a.clone().merge(&AttackReport {
            attempts: 3,
            successes: 1,
            ..AttackReport::new("x")
        });
        assert_eq!((merged.attempts, merged.successes), (3, 1));
        assert_eq!(AttackReport::new("y").success_rate(), 0.0);
    }
}
