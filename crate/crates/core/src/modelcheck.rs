// SPDX-License-Identifier: Apache-2.0

//! Exhaustive bounded model check of a single security block.
//!
//! Every operation sequence up to a given length is driven against the real
//! [`SecurityBlockState`] together with an honest issuer, and each step is
//! checked against the block's safety and liveness properties. States that
//! agree on everything the properties can observe are explored once per
//! remaining depth.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::block::{
    BlockConfig, GateOutcome, License, Nonce, NonceValue, PlantedFlaw, SecurityBlockState,
    VerifierMaterial,
};
use crate::crypto::{
    mac_tag, sign_license, LicensePayload, SchemeId, SigningKeypair, SymmetricKey,
};
use crate::entropy::EntropySource;
use crate::ids::{BatchId, BlockId, BlockKind};
use crate::variants::{pack_bits, preshared_issue, AntifuseArray, PresharedSecret};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    Challenge,
    /// A genuine license for the pending nonce, or for an unsolicited one if none is pending.
    ApplyFresh,
    /// Re-applies the last accepted license.
    ApplyReplay,
    /// A license for the pending nonce with a corrupted proof.
    ApplyForged,
    /// A genuine license for the pending nonce that expired before application.
    ApplyExpired,
    Execute,
    Trip,
}

impl Op {
    pub const ALL: [Op; 7] = [
        Op::Challenge,
        Op::ApplyFresh,
        Op::ApplyReplay,
        Op::ApplyForged,
        Op::ApplyExpired,
        Op::Execute,
        Op::Trip,
    ];
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub trace: Vec<Op>,
    pub violation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelCheckReport {
    pub kind: BlockKind,
    pub max_depth: usize,
    /// Number of operation sequences of length at most `max_depth`.
    pub traces_covered: u128,
    /// Distinct (abstract state, remaining depth) pairs expanded.
    pub states_expanded: usize,
    pub counterexamples: Vec<Counterexample>,
}

#[derive(Clone)]
enum Issuer {
    Signature(SigningKeypair),
    Mac([u8; 32]),
    Preshared(PresharedSecret),
}

const BATCH: BatchId = BatchId(1);
const GRANT: u32 = 2;
const CLOCK: u64 = 10;
const MAX_COUNTEREXAMPLES: usize = 16;

impl Issuer {
    fn license(&mut self, block: BlockId, nonce: &Nonce, expiry: u64) -> License {
        let echo = nonce.echo();
        let payload = LicensePayload {
            batch: BATCH,
            block,
            nonce_echo: echo,
            grant_ops: GRANT,
            expiry,
        }
        .encode();
        let proof = match (self, &nonce.value) {
            (Issuer::Signature(kp), _) => sign_license(kp, &payload).expect("private key present"),
            (Issuer::Mac(key), _) => mac_tag(key, &payload).expect("32-byte key").to_vec(),
            (Issuer::Preshared(secret), NonceValue::Positions(ch)) => {
                pack_bits(&preshared_issue(secret, ch).expect("challenge within secret"))
            }
            (Issuer::Preshared(_), NonceValue::Wide(_)) => {
                unreachable!("pre-shared blocks issue positions")
            }
        };
        License {
            block,
            batch: BATCH,
            nonce_echo: echo,
            grant_ops: GRANT,
            expiry,
            proof,
        }
    }
}

fn setup(kind: BlockKind) -> (SecurityBlockState, Issuer) {
    let id = BlockId::new(1, 0);
    let (verifier, issuer) = match kind {
        BlockKind::EcdsaTrng | BlockKind::CounterNonce => {
            let kp = SigningKeypair::generate(SchemeId::AltSignature, 1);
            (
                VerifierMaterial::Signature(kp.public_part().clone()),
                Issuer::Signature(kp),
            )
        }
        BlockKind::SymmetricMac => {
            let key = [9u8; 32];
            (
                VerifierMaterial::Symmetric(SymmetricKey {
                    key_id: 0,
                    secret: key,
                    unique_per_block: true,
                }),
                Issuer::Mac(key),
            )
        }
        BlockKind::PresharedBits => {
            let secret = PresharedSecret::random(256, 1);
            (
                VerifierMaterial::Preshared {
                    bits: secret.bits(),
                    k: 8,
                    max_grant_ops: u32::MAX,
                },
                Issuer::Preshared(secret),
            )
        }
    };
    let state = SecurityBlockState::power_on(BlockConfig {
        id,
        batch: BATCH,
        kind,
        verifier,
        antifuse: (kind == BlockKind::CounterNonce).then(|| AntifuseArray::new(4096)),
        response_delay_secs: 0.0,
    })
    .expect("valid config");
    (state, issuer)
}

#[derive(Clone)]
struct World {
    block: SecurityBlockState,
    issuer: Issuer,
    entropy: EntropySource,
    last_accepted: Option<License>,
    granted: u64,
    executed: u64,
    stray_nonces: u64,
}

type Key = (u64, bool, bool, u64, bool);

impl World {
    fn key(&self) -> Key {
        (
            self.block.remaining_ops(),
            self.block.pending_nonce().is_some(),
            self.last_accepted.is_some(),
            self.granted - self.executed.min(self.granted),
            self.granted > 0,
        )
    }

    fn apply(&mut self, lic: &License) -> bool {
        match self.block.apply_license(lic, CLOCK) {
            Ok(g) => {
                self.granted += g;
                self.last_accepted = Some(lic.clone());
                true
            }
            Err(_) => false,
        }
    }

    /// Performs `op`; returns a property violation if one occurred.
    fn step(&mut self, op: Op) -> Option<String> {
        let id = self.block.id();
        match op {
            Op::Challenge => {
                self.block
                    .issue_challenge(&mut self.entropy, CLOCK)
                    .expect("challenge");
            }
            Op::ApplyFresh => match self.block.pending_nonce().cloned() {
                Some(n) => {
                    let lic = self.issuer.license(id, &n, CLOCK + 100);
                    if !self.apply(&lic) {
                        return Some("genuine license for pending nonce rejected".into());
                    }
                }
                None => {
                    // Unsolicited: a genuine proof over a nonce the block never issued.
                    self.stray_nonces += 1;
                    let mut stray = self.block.clone();
                    let mut src = EntropySource::unbiased(0xdead_0000 + self.stray_nonces);
                    let n = stray.issue_challenge(&mut src, CLOCK).expect("challenge");
                    let lic = self.issuer.license(id, &n, CLOCK + 100);
                    if self.apply(&lic) {
                        return Some("license accepted with no pending nonce".into());
                    }
                }
            },
            Op::ApplyReplay => {
                if let Some(lic) = self.last_accepted.clone() {
                    if self.block.apply_license(&lic, CLOCK).is_ok() {
                        return Some("replayed license accepted".into());
                    }
                }
            }
            Op::ApplyForged => {
                if let Some(n) = self.block.pending_nonce().cloned() {
                    let mut lic = self.issuer.license(id, &n, CLOCK + 100);
                    lic.proof.iter_mut().for_each(|b| *b = !*b);
                    if self.block.apply_license(&lic, CLOCK).is_ok() {
                        return Some("forged license accepted".into());
                    }
                }
            }
            Op::ApplyExpired => {
                if let Some(n) = self.block.pending_nonce().cloned() {
                    let lic = self.issuer.license(id, &n, CLOCK - 1);
                    if self.block.apply_license(&lic, CLOCK).is_ok() {
                        return Some("expired license accepted".into());
                    }
                }
            }
            Op::Execute => {
                let before = self.block.remaining_ops();
                match self.block.execute_gated(false) {
                    GateOutcome::Halt if before > 0 => {
                        return Some("halted with allowance left".into())
                    }
                    GateOutcome::Halt => {}
                    GateOutcome::Pass(_) => {
                        if before == 0 {
                            return Some("executed at zero allowance".into());
                        }
                        self.executed += 1;
                        if self.granted == 0 {
                            return Some("executed with no license ever accepted".into());
                        }
                        if self.executed > self.granted {
                            return Some(format!(
                                "executed {} > granted {}",
                                self.executed, self.granted
                            ));
                        }
                        if self.block.remaining_ops() != before - 1 {
                            return Some("allowance did not decrease by one".into());
                        }
                    }
                }
            }
            Op::Trip => {
                self.block.trip_glitch_detector();
                if self.block.remaining_ops() != 0 {
                    return Some("glitch trip left allowance".into());
                }
            }
        }
        None
    }
}

struct Search {
    seen: HashSet<(Key, usize)>,
    trace: Vec<Op>,
    found: Vec<Counterexample>,
}

impl Search {
    fn dfs(&mut self, world: &World, depth_left: usize) {
        if depth_left == 0
            || self.found.len() >= MAX_COUNTEREXAMPLES
            || !self.seen.insert((world.key(), depth_left))
        {
            return;
        }
        for op in Op::ALL {
            let mut next = world.clone();
            self.trace.push(op);
            match next.step(op) {
                Some(violation) => self.found.push(Counterexample {
                    trace: self.trace.clone(),
                    violation,
                }),
                None => self.dfs(&next, depth_left - 1),
            }
            self.trace.pop();
        }
    }
}

/// Checks every operation trace of length up to `max_depth` on a block of
/// `kind`, optionally with a planted flaw.
pub fn model_check(
    kind: BlockKind,
    max_depth: usize,
    flaw: Option<PlantedFlaw>,
) -> ModelCheckReport {
    let (mut block, issuer) = setup(kind);
    if let Some(f) = flaw {
        block = block.with_planted_flaw(f);
    }
    let world = World {
        block,
        issuer,
        entropy: EntropySource::unbiased(7),
        last_accepted: None,
        granted: 0,
        executed: 0,
        stray_nonces: 0,
    };
    let mut search = Search {
        seen: HashSet::new(),
        trace: Vec::new(),
        found: Vec::new(),
    };
    search.dfs(&world, max_depth);
    let n = Op::ALL.len() as u128;
    ModelCheckReport {
        kind,
        max_depth,
        traces_covered: (0..=max_depth as u32).map(|l| n.pow(l)).sum(),
        states_expanded: search.seen.len(),
        counterexamples: search.found,
    }
}
