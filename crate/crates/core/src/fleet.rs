// SPDX-License-Identifier: Apache-2.0

//! A fleet of provisioned chips together with the authorizer that
//! licenses them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authorizer::{
    derive_seed, Authorizer, AuthorizerError, AuthorizerKeyring, BlockPlan, ProvisioningParams,
    Quorum,
};
use crate::block::{BlockError, PlantedFlaw, SecurityBlockState};
use crate::chip::{build_topology, ChipTopology, EditCampaignState, TopologyError};
use crate::crypto::SchemeId;
use crate::ids::{BatchId, BlockKind};

/// Sub-stream labels for [`derive_seed`].
pub mod stream {
    pub const TOPOLOGY: u64 = 1;
    pub const VARIANTS: u64 = 2;
    pub const KEYS: u64 = 3;
    pub const SECRETS: u64 = 4;
    pub const ENTROPY: u64 = 5;
    pub const CHANNEL: u64 = 6;
    pub const CAMPAIGN: u64 = 7;
}

/// Fraction of blocks of each kind; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantMix {
    pub ecdsa_trng: f64,
    pub counter_nonce: f64,
    pub symmetric_mac: f64,
    pub preshared_bits: f64,
}

impl VariantMix {
    pub fn only(kind: BlockKind) -> Self {
        let mut mix = Self::default();
        *mix.slot_mut(kind) = 1.0;
        mix
    }

    fn slot_mut(&mut self, kind: BlockKind) -> &mut f64 {
        match kind {
            BlockKind::EcdsaTrng => &mut self.ecdsa_trng,
            BlockKind::CounterNonce => &mut self.counter_nonce,
            BlockKind::SymmetricMac => &mut self.symmetric_mac,
            BlockKind::PresharedBits => &mut self.preshared_bits,
        }
    }

    pub fn fractions(&self) -> [(BlockKind, f64); 4] {
        [
            (BlockKind::EcdsaTrng, self.ecdsa_trng),
            (BlockKind::CounterNonce, self.counter_nonce),
            (BlockKind::SymmetricMac, self.symmetric_mac),
            (BlockKind::PresharedBits, self.preshared_bits),
        ]
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let fr = self.fractions();
        if let Some((kind, f)) = fr.iter().find(|(_, f)| !(0.0..=1.0).contains(f)) {
            return Err(FleetError::BadFraction {
                kind: *kind,
                value: *f,
            });
        }
        let sum: f64 = fr.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FleetError::MixSum(sum));
        }
        Ok(())
    }

    /// Per-kind block counts for `n` blocks by largest remainder.
    pub fn apportion(&self, n: usize) -> Vec<(BlockKind, usize)> {
        let fr = self.fractions();
        let exact: Vec<f64> = fr.iter().map(|(_, f)| f * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        fr.iter().zip(counts).map(|((k, _), c)| (*k, c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub chips: usize,
    pub rows: u32,
    pub cols: u32,
    pub blocks_per_edge: usize,
    pub variant_mix: VariantMix,
    /// Signature schemes, assigned round-robin by gate slot within each edge.
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeId>,
    #[serde(default)]
    pub provisioning: ProvisioningParams,
    /// Edge indices stripped of their gates on every chip.
    #[serde(default)]
    pub planted_ungated_edges: Vec<usize>,
}

fn default_schemes() -> Vec<SchemeId> {
    vec![SchemeId::EcdsaP256]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthorityConfig {
    pub batches: u32,
    pub quorum_m: usize,
    pub quorum_n: usize,
    #[serde(default = "one")]
    pub backups: usize,
    /// Share holders that show up to sign; defaults to the first m.
    #[serde(default)]
    pub shares_present: Option<Vec<String>>,
}

fn one() -> usize {
    1
}

impl AuthorityConfig {
    pub fn shares(&self) -> Vec<String> {
        self.shares_present
            .clone()
            .unwrap_or_else(|| (1..=self.quorum_m).map(|i| format!("share-{i}")).collect())
    }
}

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("variant fraction for {kind} is {value}, outside [0, 1]")]
    BadFraction { kind: BlockKind, value: f64 },
    #[error("variant fractions sum to {0}, not 1")]
    MixSum(f64),
    #[error("fleet needs at least one chip, batch and signature scheme")]
    Empty,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Authorizer(#[from] AuthorizerError),
    #[error(transparent)]
    Block(#[from] BlockError),
}

#[derive(Debug, Clone)]
pub struct Chip {
    pub topology: ChipTopology,
    /// Indexed by block index.
    pub blocks: Vec<SecurityBlockState>,
    pub plan: Vec<BlockPlan>,
    pub batch: BatchId,
    pub edits: EditCampaignState,
}

impl Chip {
    pub fn chip_id(&self) -> u64 {
        self.topology.chip_id()
    }

    /// Scheme of the block at `index`, if it is a signature block.
    pub fn scheme_of(&self, index: u32) -> Option<SchemeId> {
        let p = &self.plan[index as usize];
        p.kind.uses_signature().then_some(p.scheme)
    }

    /// Power-cycles every block: allowances and pending nonces are lost.
    pub fn power_cycle(&mut self) {
        for b in &mut self.blocks {
            *b = b.power_cycle();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fleet {
    pub chips: Vec<Chip>,
    pub authorizer: Authorizer,
    pub shares: Vec<String>,
}

/// Per-block kinds and schemes for one chip's topology.
fn plan_blocks(topology: &ChipTopology, cfg: &FleetConfig, seed: u64) -> Vec<BlockPlan> {
    let n = topology.block_count();
    let mut kinds: Vec<BlockKind> = cfg
        .variant_mix
        .apportion(n)
        .into_iter()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let slot = topology.placement(i as u32).map_or(0, |(_, s)| s);
            BlockPlan {
                index: i as u32,
                kind,
                scheme: cfg.schemes[slot % cfg.schemes.len()],
            }
        })
        .collect()
}

pub fn build_fleet(
    cfg: &FleetConfig,
    authority: &AuthorityConfig,
    seed: u64,
) -> Result<Fleet, FleetError> {
    cfg.variant_mix.validate()?;
    if cfg.chips == 0 || authority.batches == 0 || cfg.schemes.is_empty() {
        return Err(FleetError::Empty);
    }
    let quorum = Quorum::numbered(authority.quorum_m, authority.quorum_n)?;
    let mut authorizer = Authorizer::new(AuthorizerKeyring::new(quorum, authority.backups));
    let mut schemes = cfg.schemes.clone();
    schemes.sort();
    schemes.dedup();
    for b in 1..=authority.batches {
        authorizer.provision_batch(BatchId(b), &schemes, derive_seed(seed, &[stream::KEYS]))?;
    }
    let mut chips = Vec::with_capacity(cfg.chips);
    for i in 0..cfg.chips as u64 {
        let chip_id = i + 1;
        let mut topology = build_topology(
            chip_id,
            cfg.rows,
            cfg.cols,
            cfg.blocks_per_edge,
            derive_seed(seed, &[stream::TOPOLOGY, i]),
        )?;
        for &e in &cfg.planted_ungated_edges {
            topology.plant_ungated_edge(e)?;
        }
        let plan = plan_blocks(&topology, cfg, derive_seed(seed, &[stream::VARIANTS, i]));
        let batch = BatchId((i % authority.batches as u64) as u32 + 1);
        let configs = authorizer.provision_chip(
            chip_id,
            batch,
            &plan,
            &cfg.provisioning,
            derive_seed(seed, &[stream::SECRETS]),
        )?;
        let blocks = configs
            .into_iter()
            .map(SecurityBlockState::power_on)
            .collect::<Result<Vec<_>, _>>()?;
        chips.push(Chip {
            topology,
            blocks,
            plan,
            batch,
            edits: EditCampaignState::default(),
        });
    }
    Ok(Fleet {
        chips,
        authorizer,
        shares: authority.shares(),
    })
}

impl Fleet {
    pub fn share_refs(&self) -> Vec<&str> {
        self.shares.iter().map(String::as_str).collect()
    }

    pub fn block_count(&self) -> usize {
        self.chips.iter().map(|c| c.blocks.len()).sum()
    }

    /// Backdoors every block with `flaw` (harness-sensitivity control).
    pub fn plant_flaw(&mut self, flaw: PlantedFlaw) {
        for chip in &mut self.chips {
            for b in &mut chip.blocks {
                *b = b.clone().with_planted_flaw(flaw);
            }
        }
    }
}
