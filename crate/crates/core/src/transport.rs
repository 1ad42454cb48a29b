// SPDX-License-Identifier: Apache-2.0

//! Wire formats for nonce and license bundles, the on-chip collector, and a
//! lossy channel model.
//!
//! Every integer is fixed-width big-endian.
//!
//! Nonce bundle:
//!
//! ```text
//! "NBDL" | version u8 = 1 | chip_id u64 | record_count u16 | records
//! record = block index u32 | kind u8 | payload
//!   kinds 0..=2: 16-byte nonce
//!   kind 3:      k u8 | k x position u16
//! ```
//!
//! License bundle:
//!
//! ```text
//! "LBDL" | version u8 = 1 | chip_id u64 | batch_id u32 | record_count u16 | records
//! record = block index u32 | nonce echo [16] | grant_ops u32 | expiry u64 | proof_len u16 | proof
//! ```
//!
//! The collector and the channel are outside the security boundary. They
//! can lose, drop or reorder records; none of that can cause a block to
//! accept a license it should not.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{GateOutcome, License, Nonce, NonceValue, Rejection, SecurityBlockState};
use crate::entropy::Entropy;
use crate::ids::{BatchId, BlockId, BlockKind};
use crate::variants::BitChallengeNonce;

pub const NONCE_MAGIC: &[u8; 4] = b"NBDL";
pub const LICENSE_MAGIC: &[u8; 4] = b"LBDL";
pub const VERSION: u8 = 1;
pub const NONCE_HEADER_LEN: usize = 4 + 1 + 8 + 2;
pub const LICENSE_HEADER_LEN: usize = 4 + 1 + 8 + 4 + 2;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("input truncated")]
    Truncated,
    #[error("record count does not match records")]
    CountMismatch,
    #[error("unknown block kind {0}")]
    BadKind(u8),
    #[error("more than 65535 records")]
    TooManyRecords,
    #[error("record payload does not fit its kind")]
    BadRecord,
}

impl WireError {
    /// Stable name used in golden files.
    pub fn code(self) -> &'static str {
        match self {
            WireError::BadMagic => "BadMagic",
            WireError::BadVersion(_) => "BadVersion",
            WireError::Truncated => "Truncated",
            WireError::CountMismatch => "CountMismatch",
            WireError::BadKind(_) => "BadKind",
            WireError::TooManyRecords => "TooManyRecords",
            WireError::BadRecord => "BadRecord",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceRecord {
    pub index: u32,
    pub kind: BlockKind,
    pub value: NonceValue,
}

impl NonceRecord {
    pub fn from_nonce(kind: BlockKind, nonce: &Nonce) -> Self {
        Self {
            index: nonce.block.index,
            kind,
            value: nonce.value.clone(),
        }
    }

    fn encoded_len(&self) -> usize {
        5 + match &self.value {
            NonceValue::Wide(_) => 16,
            NonceValue::Positions(c) => 1 + 2 * c.positions.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceBundle {
    pub chip_id: u64,
    pub records: Vec<NonceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LicenseRecord {
    pub index: u32,
    pub nonce_echo: [u8; 16],
    pub grant_ops: u32,
    pub expiry: u64,
    pub proof: Vec<u8>,
}

impl LicenseRecord {
    pub fn from_license(license: &License) -> Self {
        Self {
            index: license.block.index,
            nonce_echo: license.nonce_echo,
            grant_ops: license.grant_ops,
            expiry: license.expiry,
            proof: license.proof.clone(),
        }
    }

    pub fn to_license(&self, chip_id: u64, batch: BatchId) -> License {
        License {
            block: BlockId::new(chip_id, self.index),
            batch,
            nonce_echo: self.nonce_echo,
            grant_ops: self.grant_ops,
            expiry: self.expiry,
            proof: self.proof.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseBundle {
    pub chip_id: u64,
    pub batch: BatchId,
    pub records: Vec<LicenseRecord>,
}

impl LicenseBundle {
    pub fn licenses(&self) -> impl Iterator<Item = License> + '_ {
        self.records
            .iter()
            .map(|r| r.to_license(self.chip_id, self.batch))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn arr16(&mut self) -> Result<[u8; 16], WireError> {
        Ok(self.take(16)?.try_into().unwrap())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), WireError> {
        // A short buffer with the wrong magic is still a magic error.
        let head = &self.buf[..self.buf.len().min(4)];
        if head != &magic[..head.len()] {
            return Err(WireError::BadMagic);
        }
        self.take(4)?;
        match self.u8()? {
            VERSION => Ok(()),
            v => Err(WireError::BadVersion(v)),
        }
    }

    /// Record loop shared by both bundle formats.
    fn records<T>(
        &mut self,
        count: u16,
        mut one: impl FnMut(&mut Self) -> Result<T, WireError>,
    ) -> Result<Vec<T>, WireError> {
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            if self.remaining() == 0 {
                return Err(WireError::CountMismatch);
            }
            out.push(one(self)?);
        }
        if self.remaining() != 0 {
            return Err(WireError::CountMismatch);
        }
        Ok(out)
    }
}

pub fn encode_nonce_bundle(bundle: &NonceBundle) -> Result<Vec<u8>, WireError> {
    let count = u16::try_from(bundle.records.len()).map_err(|_| WireError::TooManyRecords)?;
    let body: usize = bundle.records.iter().map(NonceRecord::encoded_len).sum();
    let mut out = Vec::with_capacity(NONCE_HEADER_LEN + body);
    out.extend_from_slice(NONCE_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&bundle.chip_id.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    for r in &bundle.records {
        out.extend_from_slice(&r.index.to_be_bytes());
        out.push(r.kind.wire_byte());
        match (&r.value, r.kind) {
            (
                NonceValue::Wide(v),
                BlockKind::EcdsaTrng | BlockKind::CounterNonce | BlockKind::SymmetricMac,
            ) => out.extend_from_slice(v),
            (NonceValue::Positions(c), BlockKind::PresharedBits) => {
                let k = u8::try_from(c.positions.len()).map_err(|_| WireError::BadRecord)?;
                out.push(k);
                for p in &c.positions {
                    out.extend_from_slice(&p.to_be_bytes());
                }
            }
            _ => return Err(WireError::BadRecord),
        }
    }
    Ok(out)
}

pub fn decode_nonce_bundle(bytes: &[u8]) -> Result<NonceBundle, WireError> {
    let mut r = Reader::new(bytes);
    r.header(NONCE_MAGIC)?;
    let chip_id = r.u64()?;
    let count = r.u16()?;
    let records = r.records(count, |r| {
        let index = r.u32()?;
        let kind_byte = r.u8()?;
        let kind = BlockKind::from_wire(kind_byte).ok_or(WireError::BadKind(kind_byte))?;
        let value = if kind == BlockKind::PresharedBits {
            let k = r.u8()?;
            let positions = (0..k).map(|_| r.u16()).collect::<Result<_, _>>()?;
            NonceValue::Positions(BitChallengeNonce { positions })
        } else {
            NonceValue::Wide(r.arr16()?)
        };
        Ok(NonceRecord { index, kind, value })
    })?;
    Ok(NonceBundle { chip_id, records })
}

pub fn encode_license_bundle(bundle: &LicenseBundle) -> Result<Vec<u8>, WireError> {
    let count = u16::try_from(bundle.records.len()).map_err(|_| WireError::TooManyRecords)?;
    let mut out = Vec::with_capacity(LICENSE_HEADER_LEN + bundle.records.len() * 98);
    out.extend_from_slice(LICENSE_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&bundle.chip_id.to_be_bytes());
    out.extend_from_slice(&bundle.batch.0.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    for r in &bundle.records {
        let proof_len = u16::try_from(r.proof.len()).map_err(|_| WireError::BadRecord)?;
        out.extend_from_slice(&r.index.to_be_bytes());
        out.extend_from_slice(&r.nonce_echo);
        out.extend_from_slice(&r.grant_ops.to_be_bytes());
        out.extend_from_slice(&r.expiry.to_be_bytes());
        out.extend_from_slice(&proof_len.to_be_bytes());
        out.extend_from_slice(&r.proof);
    }
    Ok(out)
}

pub fn decode_license_bundle(bytes: &[u8]) -> Result<LicenseBundle, WireError> {
    let mut r = Reader::new(bytes);
    r.header(LICENSE_MAGIC)?;
    let chip_id = r.u64()?;
    let batch = BatchId(r.u32()?);
    let count = r.u16()?;
    let records = r.records(count, |r| {
        let index = r.u32()?;
        let nonce_echo = r.arr16()?;
        let grant_ops = r.u32()?;
        let expiry = r.u64()?;
        let proof_len = r.u16()? as usize;
        let proof = r.take(proof_len)?.to_vec();
        Ok(LicenseRecord {
            index,
            nonce_echo,
            grant_ops,
            expiry,
            proof,
        })
    })?;
    Ok(LicenseBundle {
        chip_id,
        batch,
        records,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatherMetrics {
    pub issued: usize,
    pub skipped_disabled: usize,
    /// Blocks that could not produce a nonce (antifuses exhausted or no programming voltage).
    pub failed: usize,
}

/// Asks every enabled block for a fresh challenge, in block-index order.
pub fn collector_gather(
    chip_id: u64,
    blocks: &mut [SecurityBlockState],
    entropy: &mut dyn Entropy,
    tick: u64,
) -> (NonceBundle, GatherMetrics) {
    let mut metrics = GatherMetrics::default();
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by_key(|i| blocks[*i].id().index);
    let mut records = Vec::with_capacity(blocks.len());
    for i in order {
        let block = &mut blocks[i];
        if block.disabled_by_edit() {
            metrics.skipped_disabled += 1;
            continue;
        }
        match block.issue_challenge(entropy, tick) {
            Ok(nonce) => {
                metrics.issued += 1;
                records.push(NonceRecord::from_nonce(block.kind(), &nonce));
            }
            Err(_) => metrics.failed += 1,
        }
    }
    (NonceBundle { chip_id, records }, metrics)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryMetrics {
    pub accepted: usize,
    pub granted_ops: u64,
    pub rejected: Vec<(u32, Rejection)>,
    pub unknown_block: usize,
}

/// Routes each license record to the block with that index.
pub fn collector_deliver(
    bundle: &LicenseBundle,
    blocks: &mut [SecurityBlockState],
    clock: u64,
) -> DeliveryMetrics {
    let mut metrics = DeliveryMetrics::default();
    for license in bundle.licenses() {
        let target = blocks
            .iter_mut()
            .find(|b| b.id().index == license.block.index && b.id().chip_id == bundle.chip_id);
        match target {
            Some(block) => match block.apply_license(&license, clock) {
                Ok(granted) => {
                    metrics.accepted += 1;
                    metrics.granted_ops += granted;
                }
                Err(why) => metrics.rejected.push((license.block.index, why)),
            },
            None => metrics.unknown_block += 1,
        }
    }
    metrics
}

/// Lossy, latent link between a chip owner and the authorizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Half-open `[start, end)` windows, in simulation seconds.
    pub outages: Vec<(u64, u64)>,
    pub loss_probability: f64,
    pub latency: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("outage windows overlap or are empty: {0:?}")]
    BadWindows(Vec<(u64, u64)>),
    #[error("loss probability {0} outside [0, 1]")]
    BadLoss(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered(u64),
    Lost,
}

impl ChannelModel {
    pub fn new(
        mut outages: Vec<(u64, u64)>,
        loss_probability: f64,
        latency: u64,
    ) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&loss_probability) {
            return Err(ChannelError::BadLoss(loss_probability));
        }
        outages.sort_unstable();
        let empty = outages.iter().any(|(s, e)| s >= e);
        let overlap = outages.windows(2).any(|w| w[0].1 > w[1].0);
        if empty || overlap {
            return Err(ChannelError::BadWindows(outages));
        }
        Ok(Self {
            outages,
            loss_probability,
            latency,
        })
    }

    pub fn in_outage(&self, clock: u64) -> bool {
        self.outages.iter().any(|(s, e)| (*s..*e).contains(&clock))
    }

    pub fn transmit(&self, rng: &mut impl Rng, clock: u64) -> Delivery {
        if self.in_outage(clock) {
            return Delivery::Lost;
        }
        if self.loss_probability > 0.0 && rng.gen::<f64>() < self.loss_probability {
            return Delivery::Lost;
        }
        Delivery::Delivered(clock + self.latency)
    }
}

/// Exercises one gated operation per block; true if every gate passed.
pub fn run_all_gates(blocks: &mut [SecurityBlockState]) -> bool {
    let mut all = true;
    for b in blocks.iter_mut() {
        all &= b.execute_gated(false) != GateOutcome::Halt;
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wide(index: u32, fill: u8) -> NonceRecord {
        NonceRecord {
            index,
            kind: BlockKind::EcdsaTrng,
            value: NonceValue::Wide([fill; 16]),
        }
    }

    #[test]
    fn empty_bundle_is_header_only() {
        let bytes = encode_nonce_bundle(&NonceBundle {
            chip_id: 1,
            records: vec![],
        })
        .unwrap();
        assert_eq!(bytes.len(), 15);
        assert_eq!(decode_nonce_bundle(&bytes).unwrap().records.len(), 0);
        let lb = LicenseBundle {
            chip_id: 1,
            batch: BatchId(2),
            records: vec![],
        };
        let bytes = encode_license_bundle(&lb).unwrap();
        assert_eq!(bytes.len(), LICENSE_HEADER_LEN);
        assert_eq!(decode_license_bundle(&bytes).unwrap(), lb);
    }

    #[test]
    fn thousand_record_bundle_size() {
        let records = (0..1000).map(|i| wide(i, i as u8)).collect();
        let bytes = encode_nonce_bundle(&NonceBundle {
            chip_id: 7,
            records,
        })
        .unwrap();
        assert_eq!(bytes.len(), 15 + 1000 * 21);
        assert_eq!(bytes.len(), 21_015);
    }

    #[test]
    fn exact_layout() {
        let b = NonceBundle {
            chip_id: 0x0102030405060708,
            records: vec![NonceRecord {
                index: 0x0a0b0c0d,
                kind: BlockKind::PresharedBits,
                value: NonceValue::Positions(BitChallengeNonce {
                    positions: vec![0x1234, 0x0001],
                }),
            }],
        };
        let bytes = encode_nonce_bundle(&b).unwrap();
        assert_eq!(
            hex::encode(&bytes),
            "4e42444c01\
             0102030405060708\
             0001\
             0a0b0c0d03\
             02\
             12340001"
                .replace(' ', "")
        );
    }

    #[test]
    fn decode_errors_are_distinct() {
        let good = encode_nonce_bundle(&NonceBundle {
            chip_id: 1,
            records: vec![wide(0, 1)],
        })
        .unwrap();
        let mut bad = good.clone();
        bad[0] ^= 0xff;
        assert_eq!(decode_nonce_bundle(&bad), Err(WireError::BadMagic));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode_nonce_bundle(&bad), Err(WireError::BadVersion(2)));
        assert_eq!(
            decode_nonce_bundle(&good[..good.len() - 1]),
            Err(WireError::Truncated)
        );
        assert_eq!(decode_nonce_bundle(&good[..10]), Err(WireError::Truncated));
        let mut bad = good.clone();
        bad[14] = 2;
        assert_eq!(decode_nonce_bundle(&bad), Err(WireError::CountMismatch));
        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(decode_nonce_bundle(&bad), Err(WireError::CountMismatch));
        let mut bad = good.clone();
        bad[19] = 9;
        assert_eq!(decode_nonce_bundle(&bad), Err(WireError::BadKind(9)));
        assert_eq!(decode_nonce_bundle(b"LBDL\x01"), Err(WireError::BadMagic));
        assert_eq!(decode_nonce_bundle(b"NB"), Err(WireError::Truncated));
    }

    #[test]
    fn truncated_proof() {
        let lb = LicenseBundle {
            chip_id: 3,
            batch: BatchId(4),
            records: vec![LicenseRecord {
                index: 1,
                nonce_echo: [5; 16],
                grant_ops: 6,
                expiry: 7,
                proof: vec![9; 64],
            }],
        };
        let bytes = encode_license_bundle(&lb).unwrap();
        assert_eq!(decode_license_bundle(&bytes).unwrap(), lb);
        assert_eq!(
            decode_license_bundle(&bytes[..bytes.len() - 10]),
            Err(WireError::Truncated)
        );
    }

    #[test]
    fn kind_and_value_must_agree() {
        let bad = NonceBundle {
            chip_id: 1,
            records: vec![NonceRecord {
                index: 0,
                kind: BlockKind::PresharedBits,
                value: NonceValue::Wide([0; 16]),
            }],
        };
        assert_eq!(encode_nonce_bundle(&bad), Err(WireError::BadRecord));
    }

    #[test]
    fn channel_semantics() {
        let mut rng = rand::thread_rng();
        let ch = ChannelModel::new(vec![(100, 200)], 0.0, 5).unwrap();
        assert_eq!(ch.transmit(&mut rng, 150), Delivery::Lost);
        assert_eq!(ch.transmit(&mut rng, 200), Delivery::Delivered(205));
        assert_eq!(ch.transmit(&mut rng, 99), Delivery::Delivered(104));
        let always_lost = ChannelModel::new(vec![], 1.0, 0).unwrap();
        assert_eq!(always_lost.transmit(&mut rng, 0), Delivery::Lost);
        assert!(ChannelModel::new(vec![(0, 10), (5, 20)], 0.0, 0).is_err());
        assert!(ChannelModel::new(vec![(10, 10)], 0.0, 0).is_err());
        assert!(ChannelModel::new(vec![], 1.5, 0).is_err());
    }

    fn arb_nonce_record() -> impl Strategy<Value = NonceRecord> {
        let wide =
            (any::<u32>(), 0u8..3, any::<[u8; 16]>()).prop_map(|(index, k, v)| NonceRecord {
                index,
                kind: BlockKind::from_wire(k).unwrap(),
                value: NonceValue::Wide(v),
            });
        let bits = (
            any::<u32>(),
            proptest::collection::vec(any::<u16>(), 0..=255),
        )
            .prop_map(|(index, positions)| NonceRecord {
                index,
                kind: BlockKind::PresharedBits,
                value: NonceValue::Positions(BitChallengeNonce { positions }),
            });
        prop_oneof![3 => wide, 1 => bits]
    }

    fn arb_license_record() -> impl Strategy<Value = LicenseRecord> {
        (
            any::<u32>(),
            any::<[u8; 16]>(),
            any::<u32>(),
            any::<u64>(),
            proptest::collection::vec(any::<u8>(), 0..100),
        )
            .prop_map(
                |(index, nonce_echo, grant_ops, expiry, proof)| LicenseRecord {
                    index,
                    nonce_echo,
                    grant_ops,
                    expiry,
                    proof,
                },
            )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn nonce_bundle_round_trip(chip_id in any::<u64>(), records in proptest::collection::vec(arb_nonce_record(), 0..20)) {
            let b = NonceBundle { chip_id, records };
            let bytes = encode_nonce_bundle(&b).unwrap();
            let back = decode_nonce_bundle(&bytes).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(encode_nonce_bundle(&back).unwrap(), bytes);
        }

        #[test]
        fn license_bundle_round_trip(chip_id in any::<u64>(), batch in any::<u32>(), records in proptest::collection::vec(arb_license_record(), 0..20)) {
            let b = LicenseBundle { chip_id, batch: BatchId(batch), records };
            let bytes = encode_license_bundle(&b).unwrap();
            let back = decode_license_bundle(&bytes).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(encode_license_bundle(&back).unwrap(), bytes);
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_nonce_bundle(&bytes);
            let _ = decode_license_bundle(&bytes);
        }
    }
}
