// SPDX-License-Identifier: Apache-2.0

//! The security block: a deadman's switch in front of one piece of
//! essential logic.
//!
//! A block powers on with zero allowance. It hands out a single-use
//! challenge nonce, accepts a license only if the license echoes that exact
//! nonce, carries a valid proof and has not expired, and then lets through
//! one essential operation per unit of allowance. When the allowance hits
//! zero the essential logic halts.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{mac_verify, verify_signature, LicensePayload, PublicKey, SymmetricKey};
use crate::entropy::{draw_u128, Entropy};
use crate::ids::{BatchId, BlockId, BlockKind};
use crate::variants::{
    counter_nonce_next, preshared_challenge, unpack_bits, AntifuseArray, BitChallengeNonce, Bits,
    VariantError,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("malformed verifier material: {0}")]
    MalformedVerifier(String),
    #[error("{kind} block cannot use {material} verifier material")]
    KindMismatch {
        kind: BlockKind,
        material: &'static str,
    },
    #[error("block is disabled")]
    BlockDisabled,
    #[error(transparent)]
    Variant(#[from] VariantError),
}

/// Why a license was not applied. The block state is unchanged in every case.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rejection {
    #[error("no challenge is pending")]
    NoPendingNonce,
    #[error("license addressed to another block")]
    WrongBlock,
    #[error("license does not echo the pending nonce")]
    NonceMismatch,
    #[error("license proof does not verify")]
    BadProof,
    #[error("license expired")]
    Expired,
}

/// Remaining essential operations. Saturates instead of wrapping.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct UsageAllowance(u64);

impl UsageAllowance {
    pub fn remaining_ops(self) -> u64 {
        self.0
    }

    fn grant(&mut self, ops: u64) {
        self.0 = self.0.saturating_add(ops);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NonceValue {
    /// 128-bit value: random, or block id plus counter.
    Wide(#[serde(with = "hex::serde")] [u8; 16]),
    /// Secret positions for pre-shared-bits blocks.
    Positions(BitChallengeNonce),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nonce {
    pub block: BlockId,
    pub value: NonceValue,
    pub issued_at: u64,
}

impl Nonce {
    /// The 16 bytes a license must echo back.
    pub fn echo(&self) -> [u8; 16] {
        match &self.value {
            NonceValue::Wide(v) => *v,
            NonceValue::Positions(c) => c.echo(),
        }
    }
}

/// A usage grant bound to one nonce of one block.
///
/// `proof` is a signature, a CMAC tag, or the packed revealed bits,
/// depending on the kind of the block it targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct License {
    pub block: BlockId,
    pub batch: BatchId,
    #[serde(with = "hex::serde")]
    pub nonce_echo: [u8; 16],
    pub grant_ops: u32,
    pub expiry: u64,
    #[serde(with = "hex::serde")]
    pub proof: Vec<u8>,
}

impl License {
    pub fn payload(&self) -> LicensePayload {
        LicensePayload {
            batch: self.batch,
            block: self.block,
            nonce_echo: self.nonce_echo,
            grant_ops: self.grant_ops,
            expiry: self.expiry,
        }
    }
}

/// What the block checks license proofs against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifierMaterial {
    Signature(PublicKey),
    Symmetric(SymmetricKey),
    Preshared {
        bits: Arc<Bits>,
        /// Challenge size.
        k: usize,
        /// Revealed bits cannot authenticate the grant, so the block caps it.
        max_grant_ops: u32,
    },
}

impl VerifierMaterial {
    fn name(&self) -> &'static str {
        match self {
            VerifierMaterial::Signature(_) => "signature",
            VerifierMaterial::Symmetric(_) => "symmetric",
            VerifierMaterial::Preshared { .. } => "preshared",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockConfig {
    pub id: BlockId,
    pub batch: BatchId,
    pub kind: BlockKind,
    pub verifier: VerifierMaterial,
    /// Non-volatile counter for `CounterNonce` blocks; persists across power cycles.
    pub antifuse: Option<AntifuseArray>,
    /// Simulated seconds each license check takes (rate limit).
    pub response_delay_secs: f64,
}

/// Backdoors used only to prove the attack harness can see a broken block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantedFlaw {
    /// Accepts any correctly-proven license regardless of the pending nonce.
    SkipNonceCheck,
}

/// Fault injected into one license check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifyFault {
    #[default]
    None,
    /// The proof comparison yields the opposite result.
    FlipProofCheck,
}

/// The essential logic: a two-way routing switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Address bit 0.
    Left,
    /// Address bit 1.
    Right,
}

impl Direction {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Direction::Right
        } else {
            Direction::Left
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOutcome {
    Pass(Direction),
    Halt,
}

#[derive(Debug, Clone)]
pub struct SecurityBlockState {
    id: BlockId,
    batch: BatchId,
    kind: BlockKind,
    allowance: UsageAllowance,
    pending_nonce: Option<Nonce>,
    verifier: VerifierMaterial,
    antifuse: Option<AntifuseArray>,
    response_delay_secs: f64,
    high_voltage_available: bool,
    glitch_detector_tripped: bool,
    disabled_by_edit: bool,
    flaw: Option<PlantedFlaw>,
}

impl SecurityBlockState {
    pub fn power_on(config: BlockConfig) -> Result<Self, BlockError> {
        let mismatch = || BlockError::KindMismatch {
            kind: config.kind,
            material: config.verifier.name(),
        };
        match (&config.verifier, config.kind) {
            (VerifierMaterial::Signature(pk), BlockKind::EcdsaTrng | BlockKind::CounterNonce) => {
                if pk.bytes.is_empty() {
                    return Err(BlockError::MalformedVerifier("empty public key".into()));
                }
                pk.validate()
                    .map_err(|e| BlockError::MalformedVerifier(e.to_string()))?;
            }
            (VerifierMaterial::Symmetric(_), BlockKind::SymmetricMac) => {}
            (
                VerifierMaterial::Preshared {
                    bits,
                    k,
                    max_grant_ops,
                },
                BlockKind::PresharedBits,
            ) => {
                if bits.is_empty() || *k == 0 || *k > bits.len() || *k > u8::MAX as usize {
                    return Err(BlockError::MalformedVerifier(format!(
                        "challenge size {k} invalid for {}-bit secret",
                        bits.len()
                    )));
                }
                if bits.len() > 1 << 16 {
                    return Err(BlockError::MalformedVerifier(
                        "secret larger than 2^16 bits".into(),
                    ));
                }
                if *max_grant_ops == 0 {
                    return Err(BlockError::MalformedVerifier("zero grant cap".into()));
                }
            }
            _ => return Err(mismatch()),
        }
        if config.kind == BlockKind::CounterNonce && config.antifuse.is_none() {
            return Err(BlockError::MalformedVerifier(
                "counter block without antifuse array".into(),
            ));
        }
        Ok(Self {
            id: config.id,
            batch: config.batch,
            kind: config.kind,
            allowance: UsageAllowance::default(),
            pending_nonce: None,
            verifier: config.verifier,
            antifuse: config.antifuse,
            response_delay_secs: config.response_delay_secs,
            high_voltage_available: true,
            glitch_detector_tripped: false,
            disabled_by_edit: false,
            flaw: None,
        })
    }

    /// Power-cycles the block: volatile state resets, antifuses and any
    /// physical edit persist.
    pub fn power_cycle(&self) -> Self {
        Self {
            allowance: UsageAllowance::default(),
            pending_nonce: None,
            glitch_detector_tripped: false,
            ..self.clone()
        }
    }

    pub fn id(&self) -> BlockId {
        self.id
    }

    pub fn batch(&self) -> BatchId {
        self.batch
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn verifier(&self) -> &VerifierMaterial {
        &self.verifier
    }

    pub fn allowance(&self) -> UsageAllowance {
        self.allowance
    }

    pub fn remaining_ops(&self) -> u64 {
        self.allowance.0
    }

    pub fn pending_nonce(&self) -> Option<&Nonce> {
        self.pending_nonce.as_ref()
    }

    pub fn antifuse(&self) -> Option<&AntifuseArray> {
        self.antifuse.as_ref()
    }

    pub fn response_delay_secs(&self) -> f64 {
        self.response_delay_secs
    }

    pub fn glitch_detector_tripped(&self) -> bool {
        self.glitch_detector_tripped
    }

    pub fn disabled_by_edit(&self) -> bool {
        self.disabled_by_edit
    }

    /// Scenario hook: the shared antifuse programming supply is cut.
    pub fn set_high_voltage_available(&mut self, available: bool) {
        self.high_voltage_available = available;
    }

    /// Physical edit: the gate is wired to always pass.
    pub fn mark_disabled_by_edit(&mut self) {
        self.disabled_by_edit = true;
    }

    pub fn with_planted_flaw(mut self, flaw: PlantedFlaw) -> Self {
        self.flaw = Some(flaw);
        self
    }

    /// Draws a fresh challenge, replacing any earlier pending one.
    pub fn issue_challenge(
        &mut self,
        entropy: &mut dyn Entropy,
        tick: u64,
    ) -> Result<Nonce, BlockError> {
        if self.disabled_by_edit {
            return Err(BlockError::BlockDisabled);
        }
        let value = match (&self.verifier, self.kind) {
            (_, BlockKind::CounterNonce) => {
                let fuses = self.antifuse.as_mut().expect("checked at power-on");
                NonceValue::Wide(counter_nonce_next(
                    self.id,
                    fuses,
                    self.high_voltage_available,
                )?)
            }
            (VerifierMaterial::Preshared { bits, k, .. }, _) => {
                NonceValue::Positions(preshared_challenge(bits.len(), entropy, *k)?)
            }
            _ => NonceValue::Wide(draw_u128(entropy)),
        };
        let nonce = Nonce {
            block: self.id,
            value,
            issued_at: tick,
        };
        self.pending_nonce = Some(nonce.clone());
        Ok(nonce)
    }

    /// Applies a license; returns the number of operations granted.
    pub fn apply_license(&mut self, license: &License, clock: u64) -> Result<u64, Rejection> {
        self.apply_license_with_fault(license, clock, VerifyFault::None)
    }

    pub fn apply_license_with_fault(
        &mut self,
        license: &License,
        clock: u64,
        fault: VerifyFault,
    ) -> Result<u64, Rejection> {
        if license.block != self.id {
            return Err(Rejection::WrongBlock);
        }
        let skip_nonce = self.flaw == Some(PlantedFlaw::SkipNonceCheck);
        let pending_echo = match &self.pending_nonce {
            Some(n) => Some(n.echo()),
            None if skip_nonce => None,
            None => return Err(Rejection::NoPendingNonce),
        };
        if !skip_nonce && pending_echo != Some(license.nonce_echo) {
            return Err(Rejection::NonceMismatch);
        }
        let mut proof_ok = self.proof_verifies(license);
        if fault == VerifyFault::FlipProofCheck {
            proof_ok = !proof_ok;
        }
        if !proof_ok {
            return Err(Rejection::BadProof);
        }
        if clock > license.expiry {
            return Err(Rejection::Expired);
        }
        let granted = match &self.verifier {
            VerifierMaterial::Preshared { max_grant_ops, .. } => {
                license.grant_ops.min(*max_grant_ops)
            }
            _ => license.grant_ops,
        } as u64;
        self.allowance.grant(granted);
        self.pending_nonce = None;
        Ok(granted)
    }

    fn proof_verifies(&self, license: &License) -> bool {
        if license.grant_ops == 0 {
            return false;
        }
        match &self.verifier {
            VerifierMaterial::Signature(pk) => {
                license.batch == self.batch
                    && verify_signature(pk, &license.payload().encode(), &license.proof)
            }
            VerifierMaterial::Symmetric(key) => {
                mac_verify(&key.secret, &license.payload().encode(), &license.proof)
                    .unwrap_or(false)
            }
            VerifierMaterial::Preshared { bits, k, .. } => {
                // The backdoored variant has no challenge to check against.
                let Some(Nonce {
                    value: NonceValue::Positions(challenge),
                    ..
                }) = &self.pending_nonce
                else {
                    return false;
                };
                let Some(payload) = unpack_bits(&license.proof, *k) else {
                    return false;
                };
                crate::variants::preshared_verify(
                    bits,
                    challenge,
                    &payload,
                    self.response_delay_secs,
                )
                .map(|v| v.accepted)
                .unwrap_or(false)
            }
        }
    }

    /// Runs the essential logic once if allowance remains.
    pub fn execute_gated(&mut self, address_bit: bool) -> GateOutcome {
        if self.disabled_by_edit {
            return GateOutcome::Pass(Direction::from_bit(address_bit));
        }
        if self.allowance.0 == 0 {
            return GateOutcome::Halt;
        }
        self.allowance.0 -= 1;
        GateOutcome::Pass(Direction::from_bit(address_bit))
    }

    pub fn trip_glitch_detector(&mut self) {
        self.allowance = UsageAllowance::default();
        self.glitch_detector_tripped = true;
    }
}
