// SPDX-License-Identifier: Apache-2.0

//! Scenario files and the discrete-event fleet simulation they drive.
//!
//! A scenario is a JSON document describing a fleet, its authorizer, the
//! licensing policy, the channel between them, optional key-management
//! events and a list of attack campaigns. Every random choice derives from
//! the single `seed` through named sub-streams, so a scenario and seed
//! determine the outcome byte for byte.
//!
//! Time is in seconds. Licensing rounds run every renewal interval
//! (`validity_seconds / licenses_per_period`) starting at 0; each round
//! gathers a nonce bundle per chip, sends it over the channel, has the
//! authorizer answer it and sends the license bundle back. Workload ticks
//! run every `workload_interval_seconds` starting one interval in, and each
//! tick executes one gated operation on every block of every chip.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{
    edit_campaign, extraction_campaign, forgery_campaign, glitch_campaign, glitch_targets,
    key_theft_campaign, replay_campaign, AttackReport, EditParams, GlitchModel,
};
use crate::authorizer::{derive_seed, GrantMode, IssuancePolicy};
use crate::block::{GateOutcome, License, PlantedFlaw};
use crate::chip::audit_bypass;
use crate::crypto::SchemeId;
use crate::entropy::EntropySource;
use crate::fleet::{build_fleet, stream, AuthorityConfig, Fleet, FleetConfig, FleetError};
use crate::ids::{BatchId, BlockKind};
use crate::transport::{
    collector_deliver, collector_gather, decode_license_bundle, encode_nonce_bundle, ChannelModel,
    Delivery,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub grant_ops: u32,
    pub validity_seconds: u64,
    /// Renewal rounds per validity period.
    #[serde(default = "one_u32")]
    pub licenses_per_period: u32,
    #[serde(default = "fixed_mode")]
    pub grant_mode: GrantMode,
}

fn one_u32() -> u32 {
    1
}

fn fixed_mode() -> GrantMode {
    GrantMode::Fixed
}

impl PolicyConfig {
    pub fn issuance(&self) -> IssuancePolicy {
        IssuancePolicy {
            grant_ops: self.grant_ops,
            validity_period: self.validity_seconds,
            licenses_per_period: self.licenses_per_period,
            grant_mode: self.grant_mode,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// `[start, end)` windows in seconds.
    pub outages: Vec<(u64, u64)>,
    pub loss_probability: f64,
    pub latency_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum KeyAction {
    Destroy {
        batches: Vec<u32>,
        #[serde(default)]
        backups_also: bool,
    },
    Restore {
        batch: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub at: u64,
    #[serde(flatten)]
    pub action: KeyAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CampaignConfig {
    Replay {
        trials: u64,
        #[serde(default)]
        cross_chip: bool,
        #[serde(default)]
        kind: Option<BlockKind>,
        /// Runs against backdoored blocks that skip the nonce check.
        #[serde(default)]
        planted_flaw: bool,
    },
    Glitch {
        targets: usize,
        trials: u64,
        model: GlitchModel,
    },
    Edit {
        #[serde(default)]
        chip: usize,
        params: EditParams,
    },
    Extraction {
        blocks_scanned_per_day: u64,
        days: u64,
    },
    Forgery {
        #[serde(default)]
        broken_scheme: Option<SchemeId>,
    },
    KeyTheft {
        batch: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_seconds: u64,
    #[serde(default = "hour")]
    pub workload_interval_seconds: u64,
    pub fleet: FleetConfig,
    pub policy: PolicyConfig,
    pub authorizer: AuthorityConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub key_events: Vec<KeyEvent>,
    #[serde(default)]
    pub campaigns: Vec<CampaignConfig>,
}

fn hour() -> u64 {
    3600
}

/// A config problem, located in the source text where possible.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

/// First line of `text` mentioning the JSON key `key`.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

fn check_p(name: &str, p: f64) -> Result<(), (&'static str, String)> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(("", format!("{name} = {p} outside [0, 1]")))
    }
}

impl ScenarioConfig {
    /// Parses and validates; errors carry the offending line when known.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            line: (e.line() > 0).then_some(e.line()),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError {
            line: line_of_key(text, key),
            message,
        })?;
        Ok(cfg)
    }

    /// Semantic checks; on failure returns the JSON key to blame and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let f = &self.fleet;
        f.variant_mix
            .validate()
            .map_err(|e| ("variant_mix", e.to_string()))?;
        if f.chips == 0 || f.rows == 0 || f.cols == 0 {
            return Err(("chips", "chips, rows and cols must be at least 1".into()));
        }
        if f.schemes.is_empty() {
            return Err((
                "schemes",
                "at least one signature scheme is required".into(),
            ));
        }
        let p = &f.provisioning;
        if p.preshared_k == 0
            || p.preshared_k > p.preshared_bits
            || p.preshared_k > 255
            || p.preshared_bits > 1 << 16
        {
            return Err((
                "preshared_k",
                format!(
                    "challenge size {} invalid for {} bits",
                    p.preshared_k, p.preshared_bits
                ),
            ));
        }
        if p.preshared_max_grant == 0 {
            return Err(("preshared_max_grant", "must be positive".into()));
        }
        let edges = crate::chip::grid_edge_count(f.rows, f.cols);
        if let Some(e) = f.planted_ungated_edges.iter().find(|&&e| e >= edges) {
            return Err((
                "planted_ungated_edges",
                format!("edge {e} out of range (grid has {edges})"),
            ));
        }
        if self.policy.validity_seconds == 0
            || self.policy.grant_ops == 0
            || self.policy.licenses_per_period == 0
        {
            return Err((
                "policy",
                "grant_ops, validity_seconds and licenses_per_period must be positive".into(),
            ));
        }
        if self.duration_seconds == 0 || self.workload_interval_seconds == 0 {
            return Err((
                "duration_seconds",
                "duration and workload interval must be positive".into(),
            ));
        }
        let a = &self.authorizer;
        if a.batches == 0 {
            return Err(("batches", "at least one batch is required".into()));
        }
        let quorum = crate::authorizer::Quorum::numbered(a.quorum_m, a.quorum_n)
            .map_err(|e| ("quorum_m", e.to_string()))?;
        if let Some(unknown) = a
            .shares()
            .iter()
            .find(|s| !quorum.holders().any(|h| h == s.as_str()))
        {
            return Err((
                "shares_present",
                format!("unknown share holder `{unknown}`"),
            ));
        }
        check_p("loss_probability", self.channel.loss_probability)
            .map_err(|(_, m)| ("loss_probability", m))?;
        ChannelModel::new(
            self.channel.outages.clone(),
            self.channel.loss_probability,
            self.channel.latency_seconds,
        )
        .map_err(|e| ("outages", e.to_string()))?;
        for ev in &self.key_events {
            let batches = match &ev.action {
                KeyAction::Destroy { batches, .. } => batches.clone(),
                KeyAction::Restore { batch } => vec![*batch],
            };
            if batches.iter().any(|b| *b == 0 || *b > a.batches) {
                return Err((
                    "key_events",
                    format!("key event names a batch outside 1..={}", a.batches),
                ));
            }
        }
        for c in &self.campaigns {
            match c {
                CampaignConfig::Glitch { model, targets, .. } => {
                    model.validate().map_err(|m| ("p_flip", m))?;
                    if *targets == 0 {
                        return Err((
                            "targets",
                            "glitch campaign needs at least one target".into(),
                        ));
                    }
                }
                CampaignConfig::Edit { chip, params } => {
                    check_p("p_success", params.model.p_success)
                        .map_err(|(_, m)| ("p_success", m))?;
                    check_p("p_damage", params.model.p_damage).map_err(|(_, m)| ("p_damage", m))?;
                    if *chip >= f.chips {
                        return Err((
                            "chip",
                            format!("edit campaign targets chip {chip} of {}", f.chips),
                        ));
                    }
                }
                CampaignConfig::KeyTheft { batch } if *batch == 0 || *batch > a.batches => {
                    return Err((
                        "batch",
                        format!("key theft names batch {batch} outside 1..={}", a.batches),
                    ));
                }
                CampaignConfig::Forgery {
                    broken_scheme: Some(s),
                } if !f.schemes.contains(s) => {
                    return Err((
                        "broken_scheme",
                        format!("scheme {s} is not used by this fleet"),
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fleet construction failed: {0}")]
    Fleet(#[from] FleetError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LicensingMetrics {
    pub rounds: u64,
    pub nonce_bundles_sent: u64,
    pub nonce_bundles_lost: u64,
    pub license_bundles_lost: u64,
    pub issuance_failures: u64,
    pub licenses_issued: u64,
    pub licenses_accepted: u64,
    pub licenses_rejected: u64,
    pub nonces_failed: u64,
    pub max_nonce_bundle_bytes: usize,
    pub total_nonce_bundle_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChipMetrics {
    pub chip_id: u64,
    pub batch: u32,
    pub blocks: usize,
    pub blocks_ever_licensed: usize,
    pub ops_granted: u64,
    pub ops_executed: u64,
    pub ticks_ok: u64,
    pub ticks_halted: u64,
    pub first_halt_at: Option<u64>,
    pub last_halt_at: Option<u64>,
    pub min_gates_on_any_path: usize,
    pub min_gates_per_edge: usize,
    pub ungated_edges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub seed: u64,
    pub duration_seconds: u64,
    pub chips: usize,
    pub total_blocks: usize,
    pub blocks_by_kind: BTreeMap<String, usize>,
    pub licensing: LicensingMetrics,
    pub workload_ticks: u64,
    pub chips_halted: usize,
    pub fleet_halt_fraction: f64,
    pub all_blocks_licensed: bool,
    pub per_chip: Vec<ChipMetrics>,
    pub campaigns: Vec<AttackReport>,
    pub total_attack_successes: u64,
    /// Campaigns other than planted-flaw controls that report any success.
    pub unexpected_attack_successes: u64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub metrics: Metrics,
    pub fleet: Fleet,
    /// `(chip_id, topology dump)`.
    pub topology_dumps: Vec<(u64, String)>,
    /// `(chip_id, nonce bundle, license bundle)` from the first round that completed.
    pub first_bundles: Vec<(u64, Vec<u8>, Option<Vec<u8>>)>,
    pub captured_licenses: Vec<License>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Key(usize),
    ChipReceives { chip: usize, bundle: Vec<u8> },
    AuthorizerReceives { chip: usize, bundle: Vec<u8> },
    Round,
    Tick,
}

struct Queue {
    heap: BinaryHeap<Reverse<(u64, u8, u64, Event)>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, at: u64, ev: Event) {
        let prio = match ev {
            Event::Key(_) => 0,
            Event::ChipReceives { .. } => 1,
            Event::AuthorizerReceives { .. } => 2,
            Event::Round => 3,
            Event::Tick => 4,
        };
        self.seq += 1;
        self.heap.push(Reverse((at, prio, self.seq, ev)));
    }

    fn pop(&mut self) -> Option<(u64, Event)> {
        self.heap.pop().map(|Reverse((t, _, _, e))| (t, e))
    }
}

/// Builds the fleet, simulates licensing and workloads, then runs campaigns.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    cfg.validate().map_err(|(_, message)| ConfigError {
        line: None,
        message,
    })?;
    let seed = cfg.seed;
    let mut fleet = build_fleet(&cfg.fleet, &cfg.authorizer, seed)?;
    let policy = cfg.policy.issuance();
    let channel = ChannelModel::new(
        cfg.channel.outages.clone(),
        cfg.channel.loss_probability,
        cfg.channel.latency_seconds,
    )
    .map_err(|e| ConfigError {
        line: None,
        message: e.to_string(),
    })?;
    let mut channel_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &[stream::CHANNEL]));
    let mut entropy: Vec<EntropySource> = (0..fleet.chips.len() as u64)
        .map(|i| EntropySource::unbiased(derive_seed(seed, &[stream::ENTROPY, i])))
        .collect();
    let shares = cfg.authorizer.shares();
    let share_refs: Vec<&str> = shares.iter().map(String::as_str).collect();

    let mut lic = LicensingMetrics::default();
    let mut per_chip: Vec<ChipMetrics> = fleet
        .chips
        .iter()
        .map(|c| {
            let audit = audit_bypass(&c.topology).ok();
            ChipMetrics {
                chip_id: c.chip_id(),
                batch: c.batch.0,
                blocks: c.blocks.len(),
                min_gates_on_any_path: audit.as_ref().map_or(0, |a| a.min_gates_on_any_path),
                min_gates_per_edge: audit.as_ref().map_or(0, |a| a.min_gates_per_edge),
                ungated_edges: audit.map(|a| a.ungated_edges).unwrap_or_default(),
                ..Default::default()
            }
        })
        .collect();
    let mut licensed: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); fleet.chips.len()];
    let mut first_bundles: BTreeMap<usize, (Vec<u8>, Option<Vec<u8>>)> = BTreeMap::new();
    let mut captured = Vec::new();
    let mut ticks = 0u64;

    let mut q = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let interval = policy.renewal_interval();
    let mut t = 0;
    while t < cfg.duration_seconds {
        q.push(t, Event::Round);
        t += interval;
    }
    let mut t = cfg.workload_interval_seconds;
    while t <= cfg.duration_seconds {
        q.push(t, Event::Tick);
        t += cfg.workload_interval_seconds;
    }
    for (i, ev) in cfg.key_events.iter().enumerate() {
        q.push(ev.at, Event::Key(i));
    }

    while let Some((now, ev)) = q.pop() {
        if now > cfg.duration_seconds {
            break;
        }
        match ev {
            Event::Key(i) => {
                let keyring = fleet.authorizer.keyring_mut();
                match &cfg.key_events[i].action {
                    KeyAction::Destroy {
                        batches,
                        backups_also,
                    } => {
                        let ids: Vec<BatchId> = batches.iter().map(|b| BatchId(*b)).collect();
                        keyring.destroy_keys(&ids, *backups_also);
                    }
                    KeyAction::Restore { batch } => {
                        let _ = keyring.restore_from_backup(BatchId(*batch));
                    }
                }
            }
            Event::Round => {
                lic.rounds += 1;
                for (ci, chip) in fleet.chips.iter_mut().enumerate() {
                    let (bundle, gm) =
                        collector_gather(chip.chip_id(), &mut chip.blocks, &mut entropy[ci], now);
                    lic.nonces_failed += gm.failed as u64;
                    let bytes = encode_nonce_bundle(&bundle).map_err(|e| {
                        ScenarioError::Invariant(format!(
                            "collector produced unencodable bundle: {e}"
                        ))
                    })?;
                    lic.nonce_bundles_sent += 1;
                    lic.max_nonce_bundle_bytes = lic.max_nonce_bundle_bytes.max(bytes.len());
                    lic.total_nonce_bundle_bytes += bytes.len() as u64;
                    match channel.transmit(&mut channel_rng, now) {
                        Delivery::Delivered(at) => q.push(
                            at,
                            Event::AuthorizerReceives {
                                chip: ci,
                                bundle: bytes,
                            },
                        ),
                        Delivery::Lost => lic.nonce_bundles_lost += 1,
                    }
                }
            }
            Event::AuthorizerReceives { chip, bundle } => {
                match fleet
                    .authorizer
                    .issue_licenses_wire(&policy, &bundle, now, &share_refs)
                {
                    Ok(out) => {
                        let issued = decode_license_bundle(&out)
                            .map(|b| b.records.len())
                            .unwrap_or(0);
                        lic.licenses_issued += issued as u64;
                        first_bundles
                            .entry(chip)
                            .or_insert_with(|| (bundle.clone(), Some(out.clone())));
                        match channel.transmit(&mut channel_rng, now) {
                            Delivery::Delivered(at) => {
                                q.push(at, Event::ChipReceives { chip, bundle: out })
                            }
                            Delivery::Lost => lic.license_bundles_lost += 1,
                        }
                    }
                    Err(_) => {
                        first_bundles
                            .entry(chip)
                            .or_insert_with(|| (bundle.clone(), None));
                        lic.issuance_failures += 1;
                    }
                }
            }
            Event::ChipReceives { chip, bundle } => {
                let decoded = decode_license_bundle(&bundle).map_err(|e| {
                    ScenarioError::Invariant(format!("authorizer produced undecodable bundle: {e}"))
                })?;
                let m = collector_deliver(&decoded, &mut fleet.chips[chip].blocks, now);
                lic.licenses_accepted += m.accepted as u64;
                lic.licenses_rejected += (m.rejected.len() + m.unknown_block) as u64;
                per_chip[chip].ops_granted += m.granted_ops;
                let rejected: BTreeSet<u32> = m.rejected.iter().map(|(i, _)| *i).collect();
                for r in &decoded.records {
                    if !rejected.contains(&r.index) {
                        licensed[chip].insert(r.index);
                    }
                }
                captured.extend(decoded.licenses());
            }
            Event::Tick => {
                ticks += 1;
                for (ci, chip) in fleet.chips.iter_mut().enumerate() {
                    let mut halted = false;
                    for b in &mut chip.blocks {
                        match b.execute_gated(false) {
                            GateOutcome::Halt => halted = true,
                            GateOutcome::Pass(_) if !b.disabled_by_edit() => {
                                per_chip[ci].ops_executed += 1
                            }
                            GateOutcome::Pass(_) => {}
                        }
                    }
                    let m = &mut per_chip[ci];
                    if halted {
                        m.ticks_halted += 1;
                        m.first_halt_at.get_or_insert(now);
                        m.last_halt_at = Some(now);
                    } else {
                        m.ticks_ok += 1;
                    }
                    if m.ops_executed > m.ops_granted {
                        return Err(ScenarioError::Invariant(format!(
                            "chip {} executed {} operations with only {} granted",
                            m.chip_id, m.ops_executed, m.ops_granted
                        )));
                    }
                }
            }
        }
    }

    for (ci, m) in per_chip.iter_mut().enumerate() {
        m.blocks_ever_licensed = licensed[ci].len();
    }
    let reports = run_campaigns(cfg, &fleet, &captured);
    let mut blocks_by_kind = BTreeMap::new();
    for b in fleet.chips.iter().flat_map(|c| c.blocks.iter()) {
        *blocks_by_kind.entry(b.kind().to_string()).or_insert(0) += 1;
    }
    let chips_halted = per_chip.iter().filter(|m| m.ticks_halted > 0).count();
    let controls: BTreeSet<usize> = cfg
        .campaigns
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            matches!(
                c,
                CampaignConfig::Replay {
                    planted_flaw: true,
                    ..
                }
            )
        })
        .map(|(i, _)| i)
        .collect();
    let metrics = Metrics {
        seed,
        duration_seconds: cfg.duration_seconds,
        chips: fleet.chips.len(),
        total_blocks: fleet.block_count(),
        blocks_by_kind,
        licensing: lic,
        workload_ticks: ticks,
        chips_halted,
        fleet_halt_fraction: chips_halted as f64 / fleet.chips.len() as f64,
        all_blocks_licensed: per_chip.iter().all(|m| m.blocks_ever_licensed == m.blocks),
        per_chip,
        total_attack_successes: reports.iter().map(|r| r.successes).sum(),
        unexpected_attack_successes: reports
            .iter()
            .enumerate()
            .filter(|(i, _)| !controls.contains(i))
            .map(|(_, r)| r.successes)
            .sum(),
        campaigns: reports,
    };
    let topology_dumps = fleet
        .chips
        .iter()
        .map(|c| (c.chip_id(), c.topology.dump()))
        .collect();
    let first_bundles = first_bundles
        .into_iter()
        .map(|(ci, (n, l))| (fleet.chips[ci].chip_id(), n, l))
        .collect();
    Ok(ScenarioOutcome {
        metrics,
        fleet,
        topology_dumps,
        first_bundles,
        captured_licenses: captured,
    })
}

fn run_campaigns(cfg: &ScenarioConfig, fleet: &Fleet, captured: &[License]) -> Vec<AttackReport> {
    cfg.campaigns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let seed = derive_seed(cfg.seed, &[stream::CAMPAIGN, i as u64]);
            match c {
                CampaignConfig::Replay {
                    trials,
                    cross_chip,
                    kind,
                    planted_flaw,
                } => {
                    let mut target = fleet.clone();
                    if *planted_flaw {
                        target.plant_flaw(PlantedFlaw::SkipNonceCheck);
                    }
                    let mut r =
                        replay_campaign(&mut target, captured, *trials, *cross_chip, *kind, seed);
                    if *planted_flaw {
                        r.campaign.push_str("_planted_control");
                    }
                    r
                }
                CampaignConfig::Glitch {
                    targets,
                    trials,
                    model,
                } => glitch_campaign(&glitch_targets(fleet, *targets), model, *trials, seed),
                CampaignConfig::Edit { chip, params } => {
                    edit_campaign(&fleet.chips[*chip], params, seed)
                }
                CampaignConfig::Extraction {
                    blocks_scanned_per_day,
                    days,
                } => extraction_campaign(fleet, *blocks_scanned_per_day, *days, seed),
                CampaignConfig::Forgery { broken_scheme } => {
                    forgery_campaign(fleet, *broken_scheme, seed)
                }
                CampaignConfig::KeyTheft { batch } => {
                    key_theft_campaign(fleet, BatchId(*batch), seed)
                }
            }
        })
        .collect()
}

/// Serialized metrics; byte-identical for identical scenario and seed.
pub fn metrics_json(metrics: &Metrics) -> String {
    let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY: u64 = 86_400;

    fn outage_config(outage_days: u64) -> String {
        format!(
            r#"{{
  "seed": 7,
  "duration_seconds": {dur},
  "fleet": {{
    "chips": 3, "rows": 2, "cols": 2, "blocks_per_edge": 1,
    "variant_mix": {{ "ecdsa_trng": 0.5, "symmetric_mac": 0.5 }},
    "schemes": ["ed25519"]
  }},
  "policy": {{ "grant_ops": 72, "validity_seconds": {v}, "licenses_per_period": 3, "grant_mode": "refill_window" }},
  "authorizer": {{ "batches": 1, "quorum_m": 1, "quorum_n": 1 }},
  "channel": {{ "outages": [[{s}, {e}]], "latency_seconds": 60 }}
}}"#,
            dur = 12 * DAY,
            v = 3 * DAY,
            s = 2 * DAY + DAY / 2,
            e = 2 * DAY + DAY / 2 + outage_days * DAY,
        )
    }

    #[test]
    fn outage_halts_iff_longer_than_validity() {
        let five = run_scenario(&ScenarioConfig::parse(&outage_config(5)).unwrap()).unwrap();
        assert_eq!(five.metrics.fleet_halt_fraction, 1.0);
        assert!(five.metrics.licensing.nonce_bundles_lost > 0);
        let two = run_scenario(&ScenarioConfig::parse(&outage_config(2)).unwrap()).unwrap();
        assert_eq!(
            two.metrics.fleet_halt_fraction, 0.0,
            "{:?}",
            two.metrics.per_chip
        );
        assert!(two.metrics.all_blocks_licensed);
        for m in &two.metrics.per_chip {
            assert!(m.ops_executed <= m.ops_granted);
        }
    }

    #[test]
    fn destroying_all_keys_halts_fleet() {
        let mut cfg = ScenarioConfig::parse(
            &outage_config(0).replace("\"outages\": [[216000, 216000]], ", ""),
        )
        .unwrap();
        cfg.key_events = vec![KeyEvent {
            at: DAY,
            action: KeyAction::Destroy {
                batches: vec![1],
                backups_also: true,
            },
        }];
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.metrics.fleet_halt_fraction, 1.0);
        assert!(out.metrics.licensing.issuance_failures > 0);
        cfg.key_events.push(KeyEvent {
            at: DAY + 1,
            action: KeyAction::Restore { batch: 1 },
        });
        cfg.key_events[0].action = KeyAction::Destroy {
            batches: vec![1],
            backups_also: false,
        };
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.metrics.fleet_halt_fraction, 0.0);
    }

    #[test]
    fn config_errors_carry_lines() {
        let bad = outage_config(2).replace("\"symmetric_mac\": 0.5", "\"symmetric_mac\": 0.4");
        let err = ScenarioConfig::parse(&bad).unwrap_err();
        assert_eq!(err.line, Some(6));
        assert!(err.message.contains("sum"), "{err}");
        let syntax = outage_config(2).replace("\"batches\": 1,", "\"batches\": 1");
        let err = ScenarioConfig::parse(&syntax).unwrap_err();
        assert_eq!(err.line, Some(10));
        let unknown = outage_config(2).replace("\"quorum_n\": 1", "\"quorum_n\": 1, \"bogus\": 2");
        assert!(ScenarioConfig::parse(&unknown)
            .unwrap_err()
            .message
            .contains("bogus"));
    }

    #[test]
    fn deterministic_metrics() {
        let cfg = ScenarioConfig::parse(&outage_config(2)).unwrap();
        let a = metrics_json(&run_scenario(&cfg).unwrap().metrics);
        let b = metrics_json(&run_scenario(&cfg).unwrap().metrics);
        assert_eq!(a, b);
    }
}
