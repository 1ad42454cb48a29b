// SPDX-License-Identifier: Apache-2.0

//! The off-device license authority.
//!
//! The authorizer holds per-batch signing keys behind an m-of-n share
//! quorum, knows which blocks it provisioned (and, for symmetric and
//! pre-shared-bit blocks, their secrets), and answers nonce bundles with
//! license bundles. Private key bytes leave it only through
//! [`Authorizer::steal_key`], the theft scenario hook.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::block::{BlockConfig, License, NonceValue, VerifierMaterial};
use crate::crypto::{
    mac_tag, sign_license, CryptoError, LicensePayload, SchemeId, SigningKeypair, SymmetricKey,
};
use crate::ids::{BatchId, BlockId, BlockKind};
use crate::transport::{
    decode_nonce_bundle, encode_license_bundle, LicenseBundle, LicenseRecord, NonceBundle,
    WireError,
};
use crate::variants::{pack_bits, preshared_issue, AntifuseArray, Bits, PresharedSecret};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthorizerError {
    #[error("batch {0} already provisioned")]
    DuplicateBatch(BatchId),
    #[error("unknown batch {0}")]
    UnknownBatch(BatchId),
    #[error("unknown chip {0}")]
    UnknownChip(u64),
    #[error("chip {0} already provisioned")]
    DuplicateChip(u64),
    #[error("unknown share holder `{0}`")]
    UnknownHolder(String),
    #[error("quorum refused: {present} of {required} shares present")]
    Refused { present: usize, required: usize },
    #[error("signing keys for {0} are destroyed")]
    KeysDestroyed(BatchId),
    #[error("no backup left for {0}")]
    NoBackup(BatchId),
    #[error("batch {batch} has no {scheme} key")]
    NoSchemeKey { batch: BatchId, scheme: SchemeId },
    #[error("invalid quorum {m}-of-{n}")]
    BadQuorum { m: usize, n: usize },
    #[error("malformed bundle: {0}")]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// m-of-n share holders; signing proceeds only with at least m present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quorum {
    m: usize,
    holders: BTreeSet<String>,
}

impl Quorum {
    pub fn new(
        m: usize,
        holders: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, AuthorizerError> {
        let holders: BTreeSet<String> = holders.into_iter().map(Into::into).collect();
        if m == 0 || m > holders.len() {
            return Err(AuthorizerError::BadQuorum {
                m,
                n: holders.len(),
            });
        }
        Ok(Self { m, holders })
    }

    /// Holders named `share-1` .. `share-n`.
    pub fn numbered(m: usize, n: usize) -> Result<Self, AuthorizerError> {
        Self::new(m, (1..=n).map(|i| format!("share-{i}")))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.holders.len()
    }

    pub fn holders(&self) -> impl Iterator<Item = &str> {
        self.holders.iter().map(String::as_str)
    }

    pub fn check(&self, shares_present: &[&str]) -> Result<(), AuthorizerError> {
        let mut distinct = BTreeSet::new();
        for s in shares_present {
            if !self.holders.contains(*s) {
                return Err(AuthorizerError::UnknownHolder((*s).to_owned()));
            }
            distinct.insert(*s);
        }
        if distinct.len() < self.m {
            return Err(AuthorizerError::Refused {
                present: distinct.len(),
                required: self.m,
            });
        }
        Ok(())
    }
}

type SchemeKeys = BTreeMap<SchemeId, SigningKeypair>;

#[derive(Debug, Clone)]
struct BatchKeys {
    primary: Option<SchemeKeys>,
    /// One slot per geographically separate backup; `None` once destroyed.
    backups: Vec<Option<SchemeKeys>>,
    symmetric_master: [u8; 32],
}

/// Batch-scoped signing keys, quorum and backups.
#[derive(Debug, Clone)]
pub struct AuthorizerKeyring {
    batches: BTreeMap<BatchId, BatchKeys>,
    quorum: Quorum,
    backup_count: usize,
}

impl AuthorizerKeyring {
    pub fn new(quorum: Quorum, backup_count: usize) -> Self {
        Self {
            batches: BTreeMap::new(),
            quorum,
            backup_count,
        }
    }

    pub fn quorum(&self) -> &Quorum {
        &self.quorum
    }

    pub fn batch_ids(&self) -> impl Iterator<Item = BatchId> + '_ {
        self.batches.keys().copied()
    }

    /// Creates keys for every scheme in `schemes` under a fresh batch id.
    pub fn provision_batch(
        &mut self,
        batch: BatchId,
        schemes: &[SchemeId],
        seed: u64,
    ) -> Result<(), AuthorizerError> {
        if self.batches.contains_key(&batch) {
            return Err(AuthorizerError::DuplicateBatch(batch));
        }
        let keys: SchemeKeys = schemes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    *s,
                    SigningKeypair::generate(*s, derive_seed(seed, &[batch.0 as u64, i as u64])),
                )
            })
            .collect();
        let mut master = [0u8; 32];
        master.copy_from_slice(&Sha256::digest(
            derive_seed(seed, &[batch.0 as u64, 0x5eed]).to_be_bytes(),
        ));
        self.batches.insert(
            batch,
            BatchKeys {
                primary: Some(keys.clone()),
                backups: vec![Some(keys); self.backup_count],
                symmetric_master: master,
            },
        );
        Ok(())
    }

    fn live_key(
        &self,
        batch: BatchId,
        scheme: SchemeId,
    ) -> Result<&SigningKeypair, AuthorizerError> {
        let entry = self
            .batches
            .get(&batch)
            .ok_or(AuthorizerError::UnknownBatch(batch))?;
        let keys = entry
            .primary
            .as_ref()
            .ok_or(AuthorizerError::KeysDestroyed(batch))?;
        keys.get(&scheme)
            .ok_or(AuthorizerError::NoSchemeKey { batch, scheme })
    }

    pub fn public_key(
        &self,
        batch: BatchId,
        scheme: SchemeId,
    ) -> Result<crate::crypto::PublicKey, AuthorizerError> {
        Ok(self.live_key(batch, scheme)?.public_part().clone())
    }

    pub fn schemes(&self, batch: BatchId) -> Result<Vec<SchemeId>, AuthorizerError> {
        let entry = self
            .batches
            .get(&batch)
            .ok_or(AuthorizerError::UnknownBatch(batch))?;
        let keys = entry
            .primary
            .as_ref()
            .or_else(|| entry.backups.iter().flatten().next())
            .ok_or(AuthorizerError::KeysDestroyed(batch))?;
        Ok(keys.keys().copied().collect())
    }

    /// Signs only when at least m distinct known holders are present.
    pub fn quorum_sign(
        &self,
        batch: BatchId,
        scheme: SchemeId,
        payload: &[u8],
        shares_present: &[&str],
    ) -> Result<Vec<u8>, AuthorizerError> {
        self.quorum.check(shares_present)?;
        Ok(sign_license(self.live_key(batch, scheme)?, payload)?)
    }

    /// Destroys the primary keys of each listed batch, and every backup
    /// too when `backups_also`. Unknown batches are ignored.
    pub fn destroy_keys(&mut self, batches: &[BatchId], backups_also: bool) {
        for b in batches {
            if let Some(entry) = self.batches.get_mut(b) {
                entry.primary = None;
                if backups_also {
                    entry.backups.iter_mut().for_each(|slot| *slot = None);
                }
            }
        }
    }

    pub fn backups_remaining(&self, batch: BatchId) -> usize {
        self.batches
            .get(&batch)
            .map_or(0, |e| e.backups.iter().flatten().count())
    }

    pub fn keys_live(&self, batch: BatchId) -> bool {
        self.batches
            .get(&batch)
            .is_some_and(|e| e.primary.is_some())
    }

    pub fn restore_from_backup(&mut self, batch: BatchId) -> Result<(), AuthorizerError> {
        let entry = self
            .batches
            .get_mut(&batch)
            .ok_or(AuthorizerError::UnknownBatch(batch))?;
        let restored = entry
            .backups
            .iter()
            .flatten()
            .next()
            .cloned()
            .ok_or(AuthorizerError::NoBackup(batch))?;
        entry.primary = Some(restored);
        Ok(())
    }

    /// Theft hook: hands the attacker a live private key.
    pub fn steal_key(
        &self,
        batch: BatchId,
        scheme: SchemeId,
    ) -> Result<SigningKeypair, AuthorizerError> {
        self.live_key(batch, scheme).cloned()
    }

    fn symmetric_key(
        &self,
        batch: BatchId,
        block: BlockId,
        unique: bool,
    ) -> Result<SymmetricKey, AuthorizerError> {
        let master = self
            .batches
            .get(&batch)
            .ok_or(AuthorizerError::UnknownBatch(batch))?
            .symmetric_master;
        let secret = if unique {
            let mut h = Sha256::new();
            h.update(master);
            h.update(block.chip_id.to_be_bytes());
            h.update(block.index.to_be_bytes());
            h.finalize().into()
        } else {
            master
        };
        Ok(SymmetricKey {
            key_id: block.index,
            secret,
            unique_per_block: unique,
        })
    }
}

/// Mixes a base seed with labels into an independent sub-seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_be_bytes());
    for l in labels {
        h.update(l.to_be_bytes());
    }
    u64::from_be_bytes(h.finalize()[..8].try_into().unwrap())
}

/// How many operations each license grants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantMode {
    /// Every license grants `grant_ops`.
    Fixed,
    /// `grant_ops` covers one validity period. A block's first license
    /// grants the full amount; later ones grant the pro-rata share of the
    /// time since its previous license, capped at one period, so a block
    /// that renews on schedule holds about one period of runway.
    RefillWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuancePolicy {
    pub grant_ops: u32,
    pub validity_period: u64,
    pub licenses_per_period: u32,
    pub grant_mode: GrantMode,
}

impl IssuancePolicy {
    pub fn fixed(grant_ops: u32, validity_period: u64) -> Self {
        assert!(validity_period > 0);
        Self {
            grant_ops,
            validity_period,
            licenses_per_period: 1,
            grant_mode: GrantMode::Fixed,
        }
    }

    /// Interval between renewal rounds.
    pub fn renewal_interval(&self) -> u64 {
        (self.validity_period / self.licenses_per_period.max(1) as u64).max(1)
    }
}

/// Per-block provisioning choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub index: u32,
    pub kind: BlockKind,
    /// Signature scheme for signature kinds; ignored otherwise.
    pub scheme: SchemeId,
}

/// Chip-independent provisioning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvisioningParams {
    pub antifuse_capacity: usize,
    pub preshared_bits: usize,
    pub preshared_k: usize,
    pub preshared_max_grant: u32,
    pub response_delay_secs: f64,
    /// `false` reproduces the shared-key misconfiguration.
    pub unique_symmetric_keys: bool,
}

impl Default for ProvisioningParams {
    fn default() -> Self {
        Self {
            antifuse_capacity: 2000,
            preshared_bits: 10_000,
            preshared_k: 50,
            preshared_max_grant: u32::MAX,
            response_delay_secs: 1.0,
            unique_symmetric_keys: true,
        }
    }
}

#[derive(Debug, Clone)]
struct BlockProfile {
    kind: BlockKind,
    scheme: SchemeId,
    symmetric: Option<SymmetricKey>,
    preshared: Option<PresharedSecret>,
}

#[derive(Debug, Clone)]
struct ChipRecord {
    batch: BatchId,
    blocks: BTreeMap<u32, BlockProfile>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueReport {
    pub issued: usize,
    /// Records for blocks the authorizer never provisioned, or whose kind disagrees.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct Authorizer {
    keyring: AuthorizerKeyring,
    chips: BTreeMap<u64, ChipRecord>,
    last_issue: BTreeMap<BlockId, u64>,
}

impl Authorizer {
    pub fn new(keyring: AuthorizerKeyring) -> Self {
        Self {
            keyring,
            chips: BTreeMap::new(),
            last_issue: BTreeMap::new(),
        }
    }

    pub fn keyring(&self) -> &AuthorizerKeyring {
        &self.keyring
    }

    pub fn keyring_mut(&mut self) -> &mut AuthorizerKeyring {
        &mut self.keyring
    }

    pub fn provision_batch(
        &mut self,
        batch: BatchId,
        schemes: &[SchemeId],
        seed: u64,
    ) -> Result<(), AuthorizerError> {
        self.keyring.provision_batch(batch, schemes, seed)
    }

    pub fn chip_batch(&self, chip_id: u64) -> Option<BatchId> {
        self.chips.get(&chip_id).map(|c| c.batch)
    }

    /// Registers a chip and returns the configs its blocks power on with.
    pub fn provision_chip(
        &mut self,
        chip_id: u64,
        batch: BatchId,
        plan: &[BlockPlan],
        params: &ProvisioningParams,
        seed: u64,
    ) -> Result<Vec<BlockConfig>, AuthorizerError> {
        if self.chips.contains_key(&chip_id) {
            return Err(AuthorizerError::DuplicateChip(chip_id));
        }
        let mut profiles = BTreeMap::new();
        let mut configs = Vec::with_capacity(plan.len());
        for p in plan {
            let id = BlockId::new(chip_id, p.index);
            let (verifier, symmetric, preshared) = match p.kind {
                BlockKind::EcdsaTrng | BlockKind::CounterNonce => (
                    VerifierMaterial::Signature(self.keyring.public_key(batch, p.scheme)?),
                    None,
                    None,
                ),
                BlockKind::SymmetricMac => {
                    let key =
                        self.keyring
                            .symmetric_key(batch, id, params.unique_symmetric_keys)?;
                    (VerifierMaterial::Symmetric(key.clone()), Some(key), None)
                }
                BlockKind::PresharedBits => {
                    let mut rng =
                        ChaCha12Rng::seed_from_u64(derive_seed(seed, &[chip_id, p.index as u64]));
                    let secret =
                        PresharedSecret::new(Bits::random(params.preshared_bits, &mut rng));
                    let material = VerifierMaterial::Preshared {
                        bits: secret.bits(),
                        k: params.preshared_k,
                        max_grant_ops: params.preshared_max_grant,
                    };
                    (material, None, Some(secret))
                }
            };
            profiles.insert(
                p.index,
                BlockProfile {
                    kind: p.kind,
                    scheme: p.scheme,
                    symmetric,
                    preshared,
                },
            );
            configs.push(BlockConfig {
                id,
                batch,
                kind: p.kind,
                verifier,
                antifuse: (p.kind == BlockKind::CounterNonce)
                    .then(|| AntifuseArray::new(params.antifuse_capacity)),
                response_delay_secs: params.response_delay_secs,
            });
        }
        self.chips.insert(
            chip_id,
            ChipRecord {
                batch,
                blocks: profiles,
            },
        );
        Ok(configs)
    }

    /// The authorizer's view of how many secret positions a pre-shared block has disclosed.
    pub fn preshared_revealed(&self, block: BlockId) -> Option<usize> {
        self.chips
            .get(&block.chip_id)?
            .blocks
            .get(&block.index)?
            .preshared
            .as_ref()
            .map(PresharedSecret::revealed_count)
    }

    fn grant_for(&self, policy: &IssuancePolicy, block: BlockId, clock: u64) -> u32 {
        match (policy.grant_mode, self.last_issue.get(&block)) {
            (GrantMode::Fixed, _) | (GrantMode::RefillWindow, None) => policy.grant_ops,
            (GrantMode::RefillWindow, Some(last)) => {
                let elapsed = clock.saturating_sub(*last).min(policy.validity_period);
                let ops = (policy.grant_ops as u128 * elapsed as u128)
                    .div_ceil(policy.validity_period as u128);
                ops as u32
            }
        }
    }

    /// One license per recognised nonce record, all from the chip's batch.
    pub fn issue_licenses(
        &mut self,
        policy: &IssuancePolicy,
        bundle: &NonceBundle,
        clock: u64,
        shares_present: &[&str],
    ) -> Result<(LicenseBundle, IssueReport), AuthorizerError> {
        self.keyring.quorum.check(shares_present)?;
        let chip = self
            .chips
            .get(&bundle.chip_id)
            .ok_or(AuthorizerError::UnknownChip(bundle.chip_id))?;
        let batch = chip.batch;
        if !self.keyring.batches.contains_key(&batch) {
            return Err(AuthorizerError::UnknownBatch(batch));
        }
        if !self.keyring.keys_live(batch) {
            return Err(AuthorizerError::KeysDestroyed(batch));
        }
        let expiry = clock.saturating_add(policy.validity_period);
        let mut report = IssueReport::default();
        let mut records = Vec::with_capacity(bundle.records.len());
        for rec in &bundle.records {
            let block = BlockId::new(bundle.chip_id, rec.index);
            let known_kind = self.chips[&bundle.chip_id]
                .blocks
                .get(&rec.index)
                .map(|p| p.kind);
            if known_kind != Some(rec.kind) {
                report.skipped += 1;
                continue;
            }
            let grant_ops = self.grant_for(policy, block, clock);
            if grant_ops == 0 {
                report.skipped += 1;
                continue;
            }
            let profile = self
                .chips
                .get_mut(&bundle.chip_id)
                .unwrap()
                .blocks
                .get_mut(&rec.index)
                .unwrap();
            let (nonce_echo, proof_source) = match (&rec.value, profile.kind) {
                (
                    NonceValue::Wide(v),
                    BlockKind::EcdsaTrng | BlockKind::CounterNonce | BlockKind::SymmetricMac,
                ) => (*v, None),
                (NonceValue::Positions(challenge), BlockKind::PresharedBits) => {
                    let secret = profile.preshared.as_mut().expect("provisioned with secret");
                    match preshared_issue(secret, challenge) {
                        Ok(bits) => (challenge.echo(), Some(pack_bits(&bits))),
                        Err(_) => {
                            report.skipped += 1;
                            continue;
                        }
                    }
                }
                _ => {
                    report.skipped += 1;
                    continue;
                }
            };
            let payload = LicensePayload {
                batch,
                block,
                nonce_echo,
                grant_ops,
                expiry,
            }
            .encode();
            let proof = match (profile.kind, proof_source) {
                (_, Some(bits)) => bits,
                (BlockKind::SymmetricMac, None) => mac_tag(
                    &profile
                        .symmetric
                        .as_ref()
                        .expect("provisioned with key")
                        .secret,
                    &payload,
                )?
                .to_vec(),
                (_, None) => sign_license(self.keyring.live_key(batch, profile.scheme)?, &payload)?,
            };
            records.push(LicenseRecord {
                index: rec.index,
                nonce_echo,
                grant_ops,
                expiry,
                proof,
            });
            self.last_issue.insert(block, clock);
            report.issued += 1;
        }
        Ok((
            LicenseBundle {
                chip_id: bundle.chip_id,
                batch,
                records,
            },
            report,
        ))
    }

    /// Wire-level entry point: nonce bundle bytes in, license bundle bytes out.
    pub fn issue_licenses_wire(
        &mut self,
        policy: &IssuancePolicy,
        nonce_bundle: &[u8],
        clock: u64,
        shares_present: &[&str],
    ) -> Result<Vec<u8>, AuthorizerError> {
        let bundle = decode_nonce_bundle(nonce_bundle)?;
        let (licenses, _) = self.issue_licenses(policy, &bundle, clock, shares_present)?;
        Ok(encode_license_bundle(&licenses)?)
    }

    /// Forges a license with a stolen or recovered signing key.
    pub fn forge_with_key(
        key: &SigningKeypair,
        batch: BatchId,
        block: BlockId,
        nonce_echo: [u8; 16],
        grant_ops: u32,
        expiry: u64,
    ) -> License {
        let payload = LicensePayload {
            batch,
            block,
            nonce_echo,
            grant_ops,
            expiry,
        };
        License {
            block,
            batch,
            nonce_echo,
            grant_ops,
            expiry,
            proof: sign_license(key, &payload.encode()).expect("stolen key has private part"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::SecurityBlockState;
    use crate::entropy::EntropySource;
    use crate::transport::{
        collector_deliver, collector_gather, decode_license_bundle, encode_nonce_bundle,
    };

    const DAY: u64 = 86_400;

    fn authority(m: usize, n: usize) -> Authorizer {
        Authorizer::new(AuthorizerKeyring::new(Quorum::numbered(m, n).unwrap(), 1))
    }

    fn plan(blocks: u32, kind: BlockKind) -> Vec<BlockPlan> {
        (0..blocks)
            .map(|index| BlockPlan {
                index,
                kind,
                scheme: SchemeId::EcdsaP256,
            })
            .collect()
    }

    fn power(configs: Vec<BlockConfig>) -> Vec<SecurityBlockState> {
        configs
            .into_iter()
            .map(|c| SecurityBlockState::power_on(c).unwrap())
            .collect()
    }

    #[test]
    fn quorum_thresholds() {
        let q = Quorum::numbered(2, 3).unwrap();
        assert!(q.check(&["share-1", "share-2"]).is_ok());
        assert_eq!(
            q.check(&["share-1"]),
            Err(AuthorizerError::Refused {
                present: 1,
                required: 2
            })
        );
        assert_eq!(
            q.check(&["share-1", "share-1"]),
            Err(AuthorizerError::Refused {
                present: 1,
                required: 2
            })
        );
        assert_eq!(
            q.check(&["mallory", "share-1"]),
            Err(AuthorizerError::UnknownHolder("mallory".into()))
        );
        assert!(Quorum::numbered(1, 1).unwrap().check(&["share-1"]).is_ok());
        assert!(Quorum::numbered(0, 1).is_err());
        assert!(Quorum::numbered(4, 3).is_err());
    }

    #[test]
    fn quorum_sign_verifies() {
        let mut a = authority(2, 3);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        let sig = a
            .keyring()
            .quorum_sign(
                BatchId(1),
                SchemeId::EcdsaP256,
                b"msg",
                &["share-1", "share-3"],
            )
            .unwrap();
        let pk = a
            .keyring()
            .public_key(BatchId(1), SchemeId::EcdsaP256)
            .unwrap();
        assert!(crate::crypto::verify_signature(&pk, b"msg", &sig));
        assert!(matches!(
            a.keyring()
                .quorum_sign(BatchId(1), SchemeId::EcdsaP256, b"msg", &["share-2"]),
            Err(AuthorizerError::Refused { .. })
        ));
    }

    #[test]
    fn duplicate_batch() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        assert_eq!(
            a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 2),
            Err(AuthorizerError::DuplicateBatch(BatchId(1)))
        );
    }

    #[test]
    fn batches_do_not_cross_verify() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        a.provision_batch(BatchId(2), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        let params = ProvisioningParams::default();
        let mut chip_a = power(
            a.provision_chip(1, BatchId(1), &plan(4, BlockKind::EcdsaTrng), &params, 1)
                .unwrap(),
        );
        let mut chip_b = power(
            a.provision_chip(2, BatchId(2), &plan(4, BlockKind::EcdsaTrng), &params, 1)
                .unwrap(),
        );
        let mut src = EntropySource::unbiased(3);
        let (nb_a, _) = collector_gather(1, &mut chip_a, &mut src, 0);
        collector_gather(2, &mut chip_b, &mut src, 0);
        let policy = IssuancePolicy::fixed(10, DAY);
        let (lb_a, _) = a.issue_licenses(&policy, &nb_a, 0, &["share-1"]).unwrap();
        // Re-target batch-1 licenses at the batch-2 chip, echoing its real nonces.
        for (lic, block) in lb_a.licenses().zip(chip_b.iter_mut()) {
            let mut moved = lic.clone();
            moved.block = block.id();
            moved.nonce_echo = block.pending_nonce().unwrap().echo();
            assert!(block.apply_license(&moved, 0).is_err());
        }
        let delivered = collector_deliver(&lb_a, &mut chip_a, 0);
        assert_eq!(delivered.accepted, 4);
    }

    #[test]
    fn hundred_chips_round_trip_over_the_wire() {
        let mut a = authority(2, 3);
        a.provision_batch(
            BatchId(1),
            &[SchemeId::EcdsaP256, SchemeId::AltSignature],
            5,
        )
        .unwrap();
        let params = ProvisioningParams {
            preshared_bits: 512,
            preshared_k: 16,
            ..Default::default()
        };
        let mut src = EntropySource::unbiased(8);
        let policy = IssuancePolicy::fixed(100, DAY);
        for chip in 0..100u64 {
            let plan: Vec<BlockPlan> = (0..4)
                .map(|i| BlockPlan {
                    index: i,
                    kind: BlockKind::ALL[i as usize],
                    scheme: SchemeId::ALL[(chip as usize + i as usize) % 2],
                })
                .collect();
            let mut blocks = power(
                a.provision_chip(chip, BatchId(1), &plan, &params, 9)
                    .unwrap(),
            );
            let (nb, _) = collector_gather(chip, &mut blocks, &mut src, 0);
            let wire = encode_nonce_bundle(&nb).unwrap();
            let out = a
                .issue_licenses_wire(&policy, &wire, 0, &["share-2", "share-3"])
                .unwrap();
            let lb = decode_license_bundle(&out).unwrap();
            let m = collector_deliver(&lb, &mut blocks, 10);
            assert_eq!(m.accepted, 4, "chip {chip}: {:?}", m.rejected);
            assert!(blocks.iter().all(|b| b.remaining_ops() == 100));
        }
    }

    #[test]
    fn replayed_bundle_yields_stale_licenses() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        let mut blocks = power(
            a.provision_chip(
                1,
                BatchId(1),
                &plan(3, BlockKind::EcdsaTrng),
                &Default::default(),
                1,
            )
            .unwrap(),
        );
        let mut src = EntropySource::unbiased(1);
        let policy = IssuancePolicy::fixed(10, DAY);
        let (old, _) = collector_gather(1, &mut blocks, &mut src, 0);
        let (first, _) = a.issue_licenses(&policy, &old, 0, &["share-1"]).unwrap();
        assert_eq!(collector_deliver(&first, &mut blocks, 0).accepted, 3);
        collector_gather(1, &mut blocks, &mut src, 1);
        let (replayed, report) = a.issue_licenses(&policy, &old, 1, &["share-1"]).unwrap();
        assert_eq!(report.issued, 3);
        let m = collector_deliver(&replayed, &mut blocks, 1);
        assert_eq!(m.accepted, 0);
        assert!(blocks.iter().all(|b| b.remaining_ops() == 10));
    }

    #[test]
    fn no_quorum_no_licenses() {
        let mut a = authority(2, 3);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        let mut blocks = power(
            a.provision_chip(
                1,
                BatchId(1),
                &plan(2, BlockKind::EcdsaTrng),
                &Default::default(),
                1,
            )
            .unwrap(),
        );
        let (nb, _) = collector_gather(1, &mut blocks, &mut EntropySource::unbiased(1), 0);
        let err = a
            .issue_licenses(&IssuancePolicy::fixed(10, DAY), &nb, 0, &["share-1"])
            .unwrap_err();
        assert_eq!(
            err,
            AuthorizerError::Refused {
                present: 1,
                required: 2
            }
        );
        assert!(blocks
            .iter_mut()
            .all(|b| b.execute_gated(false) == crate::block::GateOutcome::Halt));
    }

    #[test]
    fn destroy_and_restore() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        let mut blocks = power(
            a.provision_chip(
                1,
                BatchId(1),
                &plan(2, BlockKind::EcdsaTrng),
                &Default::default(),
                1,
            )
            .unwrap(),
        );
        let policy = IssuancePolicy::fixed(10, DAY);
        let mut src = EntropySource::unbiased(1);
        a.keyring_mut().destroy_keys(&[BatchId(1)], false);
        let (nb, _) = collector_gather(1, &mut blocks, &mut src, 0);
        assert_eq!(
            a.issue_licenses(&policy, &nb, 0, &["share-1"]).unwrap_err(),
            AuthorizerError::KeysDestroyed(BatchId(1))
        );
        a.keyring_mut().restore_from_backup(BatchId(1)).unwrap();
        let (lb, _) = a.issue_licenses(&policy, &nb, 0, &["share-1"]).unwrap();
        assert_eq!(collector_deliver(&lb, &mut blocks, 0).accepted, 2);

        a.keyring_mut().destroy_keys(&[BatchId(1)], true);
        assert_eq!(
            a.keyring_mut().restore_from_backup(BatchId(1)),
            Err(AuthorizerError::NoBackup(BatchId(1)))
        );
        assert_eq!(a.keyring().backups_remaining(BatchId(1)), 0);
        a.keyring_mut().destroy_keys(&[BatchId(99)], true);
    }

    #[test]
    fn refill_grants_pro_rata() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::AltSignature], 1)
            .unwrap();
        let plan = vec![BlockPlan {
            index: 0,
            kind: BlockKind::EcdsaTrng,
            scheme: SchemeId::AltSignature,
        }];
        let mut blocks = power(
            a.provision_chip(1, BatchId(1), &plan, &Default::default(), 1)
                .unwrap(),
        );
        let policy = IssuancePolicy {
            grant_ops: 72,
            validity_period: 3 * DAY,
            licenses_per_period: 3,
            grant_mode: GrantMode::RefillWindow,
        };
        assert_eq!(policy.renewal_interval(), DAY);
        let mut src = EntropySource::unbiased(1);
        let mut grants = vec![];
        for clock in [0, DAY, 2 * DAY, 9 * DAY] {
            let (nb, _) = collector_gather(1, &mut blocks, &mut src, clock);
            let (lb, _) = a.issue_licenses(&policy, &nb, clock, &["share-1"]).unwrap();
            grants.push(lb.records[0].grant_ops);
        }
        assert_eq!(grants, vec![72, 24, 24, 72]);
    }

    #[test]
    fn unknown_records_skipped() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        a.provision_chip(
            1,
            BatchId(1),
            &plan(1, BlockKind::EcdsaTrng),
            &Default::default(),
            1,
        )
        .unwrap();
        let nb = NonceBundle {
            chip_id: 1,
            records: vec![
                crate::transport::NonceRecord {
                    index: 5,
                    kind: BlockKind::EcdsaTrng,
                    value: NonceValue::Wide([0; 16]),
                },
                crate::transport::NonceRecord {
                    index: 0,
                    kind: BlockKind::SymmetricMac,
                    value: NonceValue::Wide([0; 16]),
                },
            ],
        };
        let (lb, report) = a
            .issue_licenses(&IssuancePolicy::fixed(1, DAY), &nb, 0, &["share-1"])
            .unwrap();
        assert!(lb.records.is_empty());
        assert_eq!(report.skipped, 2);
        let unknown = NonceBundle {
            chip_id: 77,
            records: vec![],
        };
        assert_eq!(
            a.issue_licenses(&IssuancePolicy::fixed(1, DAY), &unknown, 0, &["share-1"])
                .unwrap_err(),
            AuthorizerError::UnknownChip(77)
        );
        assert!(matches!(
            a.issue_licenses_wire(&IssuancePolicy::fixed(1, DAY), b"junk", 0, &["share-1"]),
            Err(AuthorizerError::Malformed(WireError::BadMagic))
        ));
    }

    #[test]
    fn stolen_key_forges_only_its_batch() {
        let mut a = authority(1, 1);
        a.provision_batch(BatchId(1), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        a.provision_batch(BatchId(2), &[SchemeId::EcdsaP256], 1)
            .unwrap();
        let params = ProvisioningParams::default();
        let mut chip1 = power(
            a.provision_chip(1, BatchId(1), &plan(3, BlockKind::EcdsaTrng), &params, 1)
                .unwrap(),
        );
        let mut chip2 = power(
            a.provision_chip(2, BatchId(2), &plan(3, BlockKind::EcdsaTrng), &params, 1)
                .unwrap(),
        );
        let stolen = a
            .keyring()
            .steal_key(BatchId(1), SchemeId::EcdsaP256)
            .unwrap();
        let mut src = EntropySource::unbiased(4);
        let mut wins = [0, 0];
        for (i, chip) in [&mut chip1, &mut chip2].into_iter().enumerate() {
            for b in chip.iter_mut() {
                let n = b.issue_challenge(&mut src, 0).unwrap();
                // The attacker stamps the victim's own batch id; only the key matters.
                let lic =
                    Authorizer::forge_with_key(&stolen, b.batch(), b.id(), n.echo(), 1000, 10);
                wins[i] += usize::from(b.apply_license(&lic, 0).is_ok());
            }
        }
        assert_eq!(wins, [3, 0]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[1]), derive_seed(1, &[2]));
        assert_eq!(derive_seed(1, &[1, 2]), derive_seed(1, &[1, 2]));
    }
}
