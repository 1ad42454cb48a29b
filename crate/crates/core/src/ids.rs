// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};

/// Globally unique address of one security block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub chip_id: u64,
    pub index: u32,
}

impl BlockId {
    pub const fn new(chip_id: u64, index: u32) -> Self {
        Self { chip_id, index }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.chip_id, self.index)
    }
}

/// Authorizer key scope. Chips in one batch share verifier keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BatchId(pub u32);

impl fmt::Display for BatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "batch-{}", self.0)
    }
}

/// Security block design. The discriminant is the wire kind byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Random nonce, public-key signed license.
    EcdsaTrng = 0,
    /// Block id plus antifuse counter as nonce, public-key signed license.
    CounterNonce = 1,
    /// Random nonce, pre-shared symmetric key MAC.
    SymmetricMac = 2,
    /// Random bit positions of a large pre-shared secret; no cryptography.
    PresharedBits = 3,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [
        BlockKind::EcdsaTrng,
        BlockKind::CounterNonce,
        BlockKind::SymmetricMac,
        BlockKind::PresharedBits,
    ];

    pub fn wire_byte(self) -> u8 {
        self as u8
    }

    pub fn from_wire(byte: u8) -> Option<Self> {
        Self::ALL.get(byte as usize).copied()
    }

    pub fn uses_signature(self) -> bool {
        matches!(self, BlockKind::EcdsaTrng | BlockKind::CounterNonce)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BlockKind::EcdsaTrng => "ecdsa_trng",
            BlockKind::CounterNonce => "counter_nonce",
            BlockKind::SymmetricMac => "symmetric_mac",
            BlockKind::PresharedBits => "preshared_bits",
        };
        f.write_str(s)
    }
}
