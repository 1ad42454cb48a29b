// SPDX-License-Identifier: Apache-2.0

//! Chip-level topology: a grid of routing switches whose links are gated
//! by security blocks, packet routing through those gates, a bypass audit
//! and bookkeeping for physical circuit edits.
//!
//! Packets enter on the west side at a chosen row and leave on the east
//! side. At each switch the next address bit picks the outgoing link:
//! 0 moves down (south), 1 moves right (east). Switches in the last
//! column forward straight to their east exit without consuming a bit.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{GateOutcome, SecurityBlockState};
use crate::ids::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub row: u32,
    pub col: u32,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}.{}", self.row, self.col)
    }
}

/// Edge endpoint: a west entry port, a switch, or an east exit port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Entry(u32),
    Node(NodeId),
    Exit(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Entry(r) => write!(f, "west{r}"),
            Endpoint::Node(n) => n.fmt(f),
            Endpoint::Exit(r) => write!(f, "east{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Endpoint,
    pub to: Endpoint,
    pub gates: Vec<BlockId>,
}

impl Edge {
    /// The switch an edit on this edge's gate sits next to.
    pub fn adjacent_node(&self) -> NodeId {
        match (self.from, self.to) {
            (Endpoint::Node(n), _) | (_, Endpoint::Node(n)) => n,
            _ => unreachable!("every edge touches a switch"),
        }
    }

    /// Address bit that selects this edge at its source switch. Entry and
    /// exit links carry no choice and report 1 (straight ahead).
    fn direction_bit(&self) -> bool {
        match (self.from, self.to) {
            (Endpoint::Node(a), Endpoint::Node(b)) => b.col > a.col,
            _ => true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("grid dimensions must be at least 1x1, got {rows}x{cols}")]
    EmptyGrid { rows: u32, cols: u32 },
    #[error("expected {expected} gate counts, got {got}")]
    GateCountLength { expected: usize, got: usize },
    #[error("edge {0} does not exist")]
    UnknownEdge(usize),
    #[error("no entry-to-exit path exists")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipTopology {
    chip_id: u64,
    rows: u32,
    cols: u32,
    edges: Vec<Edge>,
    /// Block index -> (edge, slot within that edge's gate list).
    placement: Vec<Option<(usize, usize)>>,
}

/// Edge layout for a grid, in a fixed order: entries, then per switch in
/// row-major order its east and south links, then exits.
fn grid_links(rows: u32, cols: u32) -> Vec<(Endpoint, Endpoint)> {
    let mut links = Vec::new();
    for r in 0..rows {
        links.push((
            Endpoint::Entry(r),
            Endpoint::Node(NodeId { row: r, col: 0 }),
        ));
    }
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            let here = Endpoint::Node(NodeId { row: r, col: c });
            links.push((here, Endpoint::Node(NodeId { row: r, col: c + 1 })));
            if r + 1 < rows {
                links.push((here, Endpoint::Node(NodeId { row: r + 1, col: c })));
            }
        }
    }
    for r in 0..rows {
        links.push((
            Endpoint::Node(NodeId {
                row: r,
                col: cols - 1,
            }),
            Endpoint::Exit(r),
        ));
    }
    links
}

/// Number of links in a `rows` x `cols` grid.
pub fn grid_edge_count(rows: u32, cols: u32) -> usize {
    let (r, c) = (rows as usize, cols as usize);
    2 * r + r * c.saturating_sub(1) + r.saturating_sub(1) * c.saturating_sub(1)
}

/// Grid with `blocks_per_edge` gates on every link.
pub fn build_topology(
    chip_id: u64,
    rows: u32,
    cols: u32,
    blocks_per_edge: usize,
    rng_seed: u64,
) -> Result<ChipTopology, TopologyError> {
    let counts = vec![blocks_per_edge; grid_edge_count(rows.max(1), cols.max(1))];
    ChipTopology::with_gate_counts(chip_id, rows, cols, &counts, rng_seed)
}

impl ChipTopology {
    /// Grid with an explicit gate count per link (see [`grid_edge_count`]
    /// for the expected length). Block indices are assigned to gate slots
    /// in a seeded random order.
    pub fn with_gate_counts(
        chip_id: u64,
        rows: u32,
        cols: u32,
        gate_counts: &[usize],
        rng_seed: u64,
    ) -> Result<Self, TopologyError> {
        if rows == 0 || cols == 0 {
            return Err(TopologyError::EmptyGrid { rows, cols });
        }
        let links = grid_links(rows, cols);
        if gate_counts.len() != links.len() {
            return Err(TopologyError::GateCountLength {
                expected: links.len(),
                got: gate_counts.len(),
            });
        }
        let total: usize = gate_counts.iter().sum();
        let mut indices: Vec<u32> = (0..total as u32).collect();
        indices.shuffle(&mut ChaCha12Rng::seed_from_u64(rng_seed));
        let mut next = indices.into_iter();
        let mut placement = vec![None; total];
        let edges = links
            .into_iter()
            .zip(gate_counts)
            .enumerate()
            .map(|(e, ((from, to), &n))| {
                let gates = (0..n)
                    .map(|slot| {
                        let index = next.next().expect("one index per slot");
                        placement[index as usize] = Some((e, slot));
                        BlockId::new(chip_id, index)
                    })
                    .collect();
                Edge { from, to, gates }
            })
            .collect();
        Ok(Self {
            chip_id,
            rows,
            cols,
            edges,
            placement,
        })
    }

    pub fn chip_id(&self) -> u64 {
        self.chip_id
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Total gate slots; block indices run over `0..block_count()`.
    pub fn block_count(&self) -> usize {
        self.placement.len()
    }

    /// Edge and slot a block gates, if it is still placed.
    pub fn placement(&self, index: u32) -> Option<(usize, usize)> {
        self.placement.get(index as usize).copied().flatten()
    }

    /// Fault injection: removes every gate from one edge. Returns the
    /// indices of the blocks that were unplaced.
    pub fn plant_ungated_edge(&mut self, edge: usize) -> Result<Vec<u32>, TopologyError> {
        let e = self
            .edges
            .get_mut(edge)
            .ok_or(TopologyError::UnknownEdge(edge))?;
        let removed: Vec<u32> = e.gates.drain(..).map(|b| b.index).collect();
        for i in &removed {
            self.placement[*i as usize] = None;
        }
        Ok(removed)
    }

    /// Fault injection: deletes an edge entirely.
    pub fn sever_edge(&mut self, edge: usize) -> Result<(), TopologyError> {
        if edge >= self.edges.len() {
            return Err(TopologyError::UnknownEdge(edge));
        }
        self.plant_ungated_edge(edge)?;
        self.edges.remove(edge);
        for (e, _) in self.placement.iter_mut().flatten() {
            if *e > edge {
                *e -= 1;
            }
        }
        Ok(())
    }

    /// One `EDGE <from> <to> GATES <id,...>` line per edge; `-` for none.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let gates = if e.gates.is_empty() {
                "-".to_owned()
            } else {
                e.gates
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out.push_str(&format!("EDGE {} {} GATES {}\n", e.from, e.to, gates));
        }
        out
    }

    /// Switch order in which every edge goes forward: column-major.
    fn node_rank(&self, n: NodeId) -> usize {
        (n.col * self.rows + n.row) as usize
    }

    fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); (self.rows * self.cols) as usize];
        for (i, e) in self.edges.iter().enumerate() {
            if let Endpoint::Node(n) = e.from {
                out[self.node_rank(n)].push(i);
            }
        }
        out
    }

    /// Address bits that steer a packet from `path`'s entry along it.
    pub fn address_for(&self, path: &[usize]) -> Vec<bool> {
        path.iter()
            .filter_map(|&i| {
                let e = &self.edges[i];
                match (e.from, e.to) {
                    (Endpoint::Node(_), Endpoint::Node(_)) => Some(e.direction_bit()),
                    _ => None,
                }
            })
            .collect()
    }

    /// Packet that follows `path` (a list of edge indices from entry to exit).
    pub fn packet_for(&self, path: &[usize], payload: Vec<u8>) -> Packet {
        let entry_row = match self.edges[path[0]].from {
            Endpoint::Entry(r) => r,
            other => panic!("path must start at an entry, starts at {other}"),
        };
        Packet {
            entry_row,
            address_bits: self.address_for(path),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub entry_row: u32,
    /// Consumed front to back, one bit per switch outside the last column.
    pub address_bits: Vec<bool>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteOutcome {
    Delivered {
        exit_row: u32,
    },
    /// A gate on this edge halted.
    Stalled {
        edge: usize,
    },
    /// The packet crossed a switch destroyed by an edit.
    Faulty {
        node: NodeId,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("packet enters at row {0}, which has no entry port")]
    BadEntry(u32),
    #[error("address exhausted at {0}")]
    AddressExhausted(NodeId),
    #[error("address steers off the grid at {0}")]
    OffGrid(NodeId),
    #[error("no block state for gate {0}")]
    UnknownBlock(BlockId),
}

fn block_mut(
    blocks: &mut [SecurityBlockState],
    id: BlockId,
) -> Result<&mut SecurityBlockState, RouteError> {
    blocks
        .get_mut(id.index as usize)
        .filter(|b| b.id() == id)
        .ok_or(RouteError::UnknownBlock(id))
}

/// Routes one packet, running every gate on each traversed edge. `blocks`
/// is indexed by block index.
pub fn route_packet(
    topology: &ChipTopology,
    blocks: &mut [SecurityBlockState],
    damaged: &BTreeSet<NodeId>,
    packet: &Packet,
) -> Result<RouteOutcome, RouteError> {
    let out = topology.out_edges();
    let mut edge = topology
        .edges
        .iter()
        .position(|e| e.from == Endpoint::Entry(packet.entry_row))
        .ok_or(RouteError::BadEntry(packet.entry_row))?;
    let mut bits = packet.address_bits.iter().copied();
    loop {
        let e = &topology.edges[edge];
        let bit = e.direction_bit();
        let mut halted = false;
        // All gates on a link evaluate together.
        for g in &e.gates {
            halted |= block_mut(blocks, *g)?.execute_gated(bit) == GateOutcome::Halt;
        }
        if halted {
            return Ok(RouteOutcome::Stalled { edge });
        }
        let node = match e.to {
            Endpoint::Exit(r) => return Ok(RouteOutcome::Delivered { exit_row: r }),
            Endpoint::Node(n) => n,
            Endpoint::Entry(_) => unreachable!("entries have no incoming edges"),
        };
        if damaged.contains(&node) {
            return Ok(RouteOutcome::Faulty { node });
        }
        let choices = &out[topology.node_rank(node)];
        edge = if node.col + 1 == topology.cols {
            *choices
                .iter()
                .find(|&&i| matches!(topology.edges[i].to, Endpoint::Exit(_)))
                .ok_or(RouteError::OffGrid(node))?
        } else {
            let bit = bits.next().ok_or(RouteError::AddressExhausted(node))?;
            *choices
                .iter()
                .find(|&&i| {
                    matches!(topology.edges[i].to, Endpoint::Node(_))
                        && topology.edges[i].direction_bit() == bit
                })
                .ok_or(RouteError::OffGrid(node))?
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Fewest blocks an attacker must defeat along any entry-to-exit path.
    pub min_gates_on_any_path: usize,
    /// Fewest gated edges along any entry-to-exit path.
    pub min_gated_edges_on_any_path: usize,
    /// Smallest gate count of any edge that lies on some entry-to-exit path.
    pub min_gates_per_edge: usize,
    /// On-path edges with no gate.
    pub ungated_edges: Vec<usize>,
    /// A path realising `min_gates_on_any_path`, as edge indices.
    pub cheapest_path: Vec<usize>,
}

/// Exact audit by dynamic programming over the acyclic grid.
pub fn audit_bypass(topology: &ChipTopology) -> Result<AuditReport, TopologyError> {
    let out = topology.out_edges();
    let n = (topology.rows * topology.cols) as usize;

    // Forward reachability from entries; best (gate sum, predecessor edge).
    let mut reach = vec![false; n];
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut best_edges: Vec<Option<usize>> = vec![None; n];
    for (i, e) in topology.edges.iter().enumerate() {
        if let (Endpoint::Entry(_), Endpoint::Node(to)) = (e.from, e.to) {
            let r = topology.node_rank(to);
            reach[r] = true;
            relax(&mut best[r], e.gates.len(), i);
            relax_edges(&mut best_edges[r], usize::from(!e.gates.is_empty()));
        }
    }
    let mut exit_best: Option<(usize, usize)> = None;
    let mut exit_edges: Option<usize> = None;
    for rank in 0..n {
        if !reach[rank] {
            continue;
        }
        let (cost, _) = best[rank].expect("reached nodes have a cost");
        let cost_edges = best_edges[rank].expect("reached nodes have a cost");
        for &i in &out[rank] {
            let e = &topology.edges[i];
            let w = e.gates.len();
            let we = usize::from(w > 0);
            match e.to {
                Endpoint::Node(to) => {
                    let r = topology.node_rank(to);
                    reach[r] = true;
                    relax(&mut best[r], cost + w, i);
                    relax_edges(&mut best_edges[r], cost_edges + we);
                }
                Endpoint::Exit(_) => {
                    relax(&mut exit_best, cost + w, i);
                    relax_edges(&mut exit_edges, cost_edges + we);
                }
                Endpoint::Entry(_) => {}
            }
        }
    }
    let (min_gates, last_edge) = exit_best.ok_or(TopologyError::Disconnected)?;

    // Backward reachability to exits.
    let mut coreach = vec![false; n];
    for rank in (0..n).rev() {
        coreach[rank] = out[rank].iter().any(|&i| match topology.edges[i].to {
            Endpoint::Exit(_) => true,
            Endpoint::Node(to) => coreach[topology.node_rank(to)],
            Endpoint::Entry(_) => false,
        });
    }
    let on_path = |e: &Edge| {
        let fwd = match e.from {
            Endpoint::Entry(_) => true,
            Endpoint::Node(f) => reach[topology.node_rank(f)],
            Endpoint::Exit(_) => false,
        };
        let back = match e.to {
            Endpoint::Exit(_) => true,
            Endpoint::Node(t) => coreach[topology.node_rank(t)],
            Endpoint::Entry(_) => false,
        };
        fwd && back
    };
    let live: Vec<usize> = (0..topology.edges.len())
        .filter(|&i| on_path(&topology.edges[i]))
        .collect();
    let ungated_edges = live
        .iter()
        .copied()
        .filter(|&i| topology.edges[i].gates.is_empty())
        .collect();
    let min_gates_per_edge = live
        .iter()
        .map(|&i| topology.edges[i].gates.len())
        .min()
        .unwrap_or(0);

    let mut cheapest_path = vec![last_edge];
    let mut cursor = topology.edges[last_edge].from;
    while let Endpoint::Node(node) = cursor {
        let (_, pred) = best[topology.node_rank(node)].expect("on cheapest path");
        cheapest_path.push(pred);
        cursor = topology.edges[pred].from;
    }
    cheapest_path.reverse();

    Ok(AuditReport {
        min_gates_on_any_path: min_gates,
        min_gated_edges_on_any_path: exit_edges.expect("exit reached"),
        min_gates_per_edge,
        ungated_edges,
        cheapest_path,
    })
}

fn relax(slot: &mut Option<(usize, usize)>, cost: usize, via: usize) {
    if slot.is_none_or(|(c, _)| cost < c) {
        *slot = Some((cost, via));
    }
}

fn relax_edges(slot: &mut Option<usize>, cost: usize) {
    if slot.is_none_or(|c| cost < c) {
        *slot = Some(cost);
    }
}

/// Enumerates every entry-to-exit path explicitly. Exponential; for
/// checking [`audit_bypass`] on small grids.
pub fn enumerate_paths(topology: &ChipTopology) -> Vec<Vec<usize>> {
    let out = topology.out_edges();
    let mut paths = Vec::new();
    let mut stack = Vec::new();
    fn walk(
        t: &ChipTopology,
        out: &[Vec<usize>],
        edge: usize,
        stack: &mut Vec<usize>,
        paths: &mut Vec<Vec<usize>>,
    ) {
        stack.push(edge);
        match t.edges[edge].to {
            Endpoint::Exit(_) => paths.push(stack.clone()),
            Endpoint::Node(n) => {
                for &next in &out[t.node_rank(n)] {
                    walk(t, out, next, stack, paths);
                }
            }
            Endpoint::Entry(_) => {}
        }
        stack.pop();
    }
    for (i, e) in topology.edges.iter().enumerate() {
        if matches!(e.from, Endpoint::Entry(_)) {
            walk(topology, &out, i, &mut stack, &mut paths);
        }
    }
    paths
}

/// Brute-force counterpart of [`audit_bypass`], without `cheapest_path`.
pub fn audit_by_enumeration(topology: &ChipTopology) -> Result<AuditReport, TopologyError> {
    let paths = enumerate_paths(topology);
    if paths.is_empty() {
        return Err(TopologyError::Disconnected);
    }
    let gates = |p: &Vec<usize>| {
        p.iter()
            .map(|&i| topology.edges[i].gates.len())
            .sum::<usize>()
    };
    let gated = |p: &Vec<usize>| {
        p.iter()
            .filter(|&&i| !topology.edges[i].gates.is_empty())
            .count()
    };
    let on_path: BTreeSet<usize> = paths.iter().flatten().copied().collect();
    let cheapest = paths.iter().min_by_key(|p| gates(p)).expect("non-empty");
    Ok(AuditReport {
        min_gates_on_any_path: gates(cheapest),
        min_gated_edges_on_any_path: paths.iter().map(gated).min().expect("non-empty"),
        min_gates_per_edge: on_path
            .iter()
            .map(|&i| topology.edges[i].gates.len())
            .min()
            .unwrap_or(0),
        ungated_edges: on_path
            .iter()
            .copied()
            .filter(|&i| topology.edges[i].gates.is_empty())
            .collect(),
        cheapest_path: cheapest.clone(),
    })
}

/// A gate lets traffic through without consuming allowance only when edited
/// out; otherwise it needs allowance left.
fn gate_open(b: &SecurityBlockState) -> bool {
    b.disabled_by_edit() || b.remaining_ops() > 0
}

/// Some path whose gates are all open and whose switches are undamaged,
/// found without running any gate.
pub fn find_open_path(
    topology: &ChipTopology,
    blocks: &[SecurityBlockState],
    damaged: &BTreeSet<NodeId>,
) -> Option<Vec<usize>> {
    let out = topology.out_edges();
    let open = |i: usize| {
        topology.edges[i]
            .gates
            .iter()
            .all(|g| blocks.get(g.index as usize).is_some_and(gate_open))
    };
    let mut pred: Vec<Option<usize>> = vec![None; (topology.rows * topology.cols) as usize];
    for (i, e) in topology.edges.iter().enumerate() {
        if let (Endpoint::Entry(_), Endpoint::Node(to)) = (e.from, e.to) {
            if open(i) && !damaged.contains(&to) && pred[topology.node_rank(to)].is_none() {
                pred[topology.node_rank(to)] = Some(i);
            }
        }
    }
    for rank in 0..pred.len() {
        if pred[rank].is_none() {
            continue;
        }
        for &i in &out[rank] {
            if !open(i) {
                continue;
            }
            match topology.edges[i].to {
                Endpoint::Exit(_) => {
                    let mut path = vec![i];
                    let mut cursor = topology.edges[i].from;
                    while let Endpoint::Node(n) = cursor {
                        let p = pred[topology.node_rank(n)].expect("reached");
                        path.push(p);
                        cursor = topology.edges[p].from;
                    }
                    path.reverse();
                    return Some(path);
                }
                Endpoint::Node(to) => {
                    let r = topology.node_rank(to);
                    if !damaged.contains(&to) && pred[r].is_none() {
                        pred[r] = Some(i);
                    }
                }
                Endpoint::Entry(_) => {}
            }
        }
    }
    None
}

/// Focused-ion-beam edit success and collateral-damage probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditModel {
    pub p_success: f64,
    pub p_damage: f64,
}

impl EditModel {
    pub fn new(p_success: f64, p_damage: f64) -> Result<Self, EditError> {
        for p in [p_success, p_damage] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EditError::BadProbability(p));
            }
        }
        Ok(Self {
            p_success,
            p_damage,
        })
    }
}

impl Default for EditModel {
    fn default() -> Self {
        Self {
            p_success: 0.95,
            p_damage: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCampaignState {
    pub edits_attempted: u64,
    pub blocks_bypassed: BTreeSet<BlockId>,
    pub collateral_damage: BTreeSet<NodeId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("block {0} is not placed on this chip")]
    UnknownBlock(BlockId),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
}

/// One edit attempt on one block. Success and damage are independent draws.
pub fn attempt_circuit_edit(
    topology: &ChipTopology,
    blocks: &mut [SecurityBlockState],
    block: BlockId,
    model: &EditModel,
    rng: &mut impl Rng,
    state: &mut EditCampaignState,
) -> Result<(), EditError> {
    let placed = (block.chip_id == topology.chip_id)
        .then(|| topology.placement(block.index))
        .flatten();
    let (edge, _) = placed.ok_or(EditError::UnknownBlock(block))?;
    let target = blocks
        .get_mut(block.index as usize)
        .filter(|b| b.id() == block)
        .ok_or(EditError::UnknownBlock(block))?;
    let success = rng.gen::<f64>() < model.p_success;
    let damage = rng.gen::<f64>() < model.p_damage;
    state.edits_attempted += 1;
    if success {
        target.mark_disabled_by_edit();
        state.blocks_bypassed.insert(block);
    }
    if damage {
        state
            .collateral_damage
            .insert(topology.edges[edge].adjacent_node());
    }
    Ok(())
}
