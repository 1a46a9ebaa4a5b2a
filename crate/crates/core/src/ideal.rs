//! Instantaneous-swap protocol on shared state, with the tracked permutation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::clocks::ClockEnsemble;
use crate::error::{invalid, violation, Result};
use crate::rng::PrngState;
use crate::topology::{NodeId, Permutation, Slot, Topology};

/// One executed swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapRecord {
    pub time: f64,
    pub slot: Slot,
    pub peer_a: NodeId,
    pub peer_b: NodeId,
}

/// Renders a swap log as `time,slot,peer_a,peer_b` CSV.
pub fn swap_log_csv(log: &[SwapRecord]) -> String {
    let mut out = String::from("time,slot,peer_a,peer_b\n");
    for r in log {
        writeln!(
            out,
            "{},{},{},{}",
            format_time(r.time),
            r.slot,
            r.peer_a,
            r.peer_b
        )
        .expect("String write");
    }
    out
}

/// Time rounded to 9 significant digits, printed in shortest form.
pub fn format_time(t: f64) -> String {
    let rounded: f64 = format!("{t:.8e}").parse().expect("float round trip");
    rounded.to_string()
}

/// Live neighbor lists, slot ownership and `γ` (peer → occupied node of `G(0)`).
#[derive(Debug, Clone)]
pub struct IdealState {
    topology0: Arc<Topology>,
    neighbors: Vec<Vec<(NodeId, Slot)>>,
    holders: Vec<(NodeId, NodeId)>,
    gamma: Permutation,
    ensemble: ClockEnsemble,
    now: f64,
    swap_count: u64,
}

impl IdealState {
    pub fn new(topology0: Arc<Topology>, rate: f64, master_seed: u64) -> Result<Self> {
        let ensemble = ClockEnsemble::centralized(&topology0, rate, master_seed)?;
        Ok(Self::with_ensemble(topology0, ensemble))
    }

    pub fn with_ensemble(topology0: Arc<Topology>, ensemble: ClockEnsemble) -> Self {
        let n = topology0.node_count();
        let mut neighbors = vec![Vec::new(); n];
        for (slot, &(a, b)) in topology0.edges().iter().enumerate() {
            neighbors[a].push((b, slot));
            neighbors[b].push((a, slot));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self {
            holders: topology0.edges().to_vec(),
            gamma: Permutation::identity(n),
            neighbors,
            topology0,
            ensemble,
            now: 0.0,
            swap_count: 0,
        }
    }

    pub fn topology0(&self) -> &Topology {
        &self.topology0
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn swap_count(&self) -> u64 {
        self.swap_count
    }

    /// `N(i)` with the clock slot shared with each neighbor.
    pub fn neighbor_entries(&self, i: NodeId) -> &[(NodeId, Slot)] {
        &self.neighbors[i]
    }

    /// `N(i)` as peer ids, in list order.
    pub fn neighbors(&self, i: NodeId) -> Vec<NodeId> {
        self.neighbors[i].iter().map(|&(p, _)| p).collect()
    }

    /// The two peers currently sharing the clock of `slot`.
    pub fn slot_holders(&self, slot: Slot) -> (NodeId, NodeId) {
        self.holders[slot]
    }

    /// `γ_t`: the node of `G(0)` that each peer currently occupies.
    pub fn tracked_permutation(&self) -> &Permutation {
        &self.gamma
    }

    /// Current undirected edge set over peer ids.
    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&(j, _)| (i.min(j), i.max(j))))
            .collect()
    }

    /// Executes the full-neighborhood exchange between the holders of `slot`.
    pub fn apply_swap(&mut self, slot: Slot, at: f64) -> Result<SwapRecord> {
        let (i, j) = self.holders[slot];
        if !self.neighbors[i].contains(&(j, slot)) || !self.neighbors[j].contains(&(i, slot)) {
            return violation(format!(
                "slot {slot} is not shared by adjacent peers {i} and {j}"
            ));
        }
        let fix = |p: NodeId| {
            if p == i {
                j
            } else if p == j {
                i
            } else {
                p
            }
        };
        let old_i = std::mem::take(&mut self.neighbors[i]);
        let old_j = std::mem::take(&mut self.neighbors[j]);
        let mut touched: Vec<NodeId> = old_i
            .iter()
            .chain(&old_j)
            .map(|&(p, _)| p)
            .filter(|&p| p != i && p != j)
            .collect();
        touched.sort_unstable();
        touched.dedup();
        for &k in &touched {
            for entry in &mut self.neighbors[k] {
                entry.0 = fix(entry.0);
            }
        }
        self.neighbors[i] = old_j.iter().map(|&(p, s)| (fix(p), s)).collect();
        self.neighbors[j] = old_i.iter().map(|&(p, s)| (fix(p), s)).collect();
        for peer in [i, j] {
            for &(p, s) in &self.neighbors[peer] {
                self.holders[s] = (peer, p);
            }
        }
        self.holders[slot] = (i, j);
        let (gi, gj) = (self.gamma.apply(i), self.gamma.apply(j));
        self.gamma.swap_images(i, j);
        debug_assert_eq!(self.topology0.slot_of(gi, gj), Some(slot));
        self.swap_count += 1;
        self.now = self.now.max(at);
        Ok(SwapRecord {
            time: at,
            slot,
            peer_a: i,
            peer_b: j,
        })
    }

    /// Processes every ring up to and including `horizon`.
    pub fn run_until(&mut self, horizon: f64) -> Result<Vec<SwapRecord>> {
        if horizon < self.now {
            return invalid(format!(
                "horizon {horizon} is before the current time {}",
                self.now
            ));
        }
        let mut log = Vec::new();
        while let Some(ev) = self.ensemble.next_until(horizon) {
            log.push(self.apply_swap(ev.slot, ev.time)?);
        }
        self.now = horizon;
        Ok(log)
    }

    /// Uniform ordered `b`-tuple of distinct members of `N(i)`.
    pub fn sample(&self, i: NodeId, b: usize, rng: &mut PrngState) -> Result<Vec<NodeId>> {
        sample_from(self.neighbors(i), b, rng)
    }

    /// Peer placement recovered from neighbor lists and clock slots alone.
    ///
    /// A peer's node of `G(0)` is the endpoint common to all its slots. With a
    /// single slot both endpoints qualify, and the tracked `γ` breaks the tie.
    pub fn placement_from_lists(&self) -> Result<Vec<NodeId>> {
        let t = &self.topology0;
        let mut placement = Vec::with_capacity(self.neighbors.len());
        for (peer, list) in self.neighbors.iter().enumerate() {
            let Some(&(_, first)) = list.first() else {
                return violation(format!("peer {peer} has no neighbors"));
            };
            let (a, b) = t.edge(first);
            let mut candidates = vec![a, b];
            for &(_, s) in &list[1..] {
                let (x, y) = t.edge(s);
                candidates.retain(|&c| c == x || c == y);
            }
            match candidates[..] {
                [v] => placement.push(v),
                [_, _] => placement.push(self.gamma.apply(peer)),
                _ => return violation(format!("slots of peer {peer} share no endpoint")),
            }
        }
        Ok(placement)
    }

    /// Symmetry, structure preservation and clock attachment.
    pub fn audit(&self) -> Result<()> {
        let t = &self.topology0;
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, s) in list {
                if !self.neighbors[j].contains(&(i, s)) {
                    return violation(format!("peer {j} lacks the back edge to {i} on slot {s}"));
                }
                if t.slot_of(self.gamma.apply(i), self.gamma.apply(j)) != Some(s) {
                    return violation(format!(
                        "slot {s} is not the G(0) edge under peers {i}, {j}"
                    ));
                }
            }
        }
        if self.edge_set() != t.permuted_edge_set(&self.gamma.inverse()) {
            return violation("edge set differs from the relabeled G(0) edge set");
        }
        Ok(())
    }
}

pub(crate) fn sample_from(
    mut pool: Vec<NodeId>,
    b: usize,
    rng: &mut PrngState,
) -> Result<Vec<NodeId>> {
    if b == 0 || b > pool.len() {
        return invalid(format!("sample size {b} outside 1..={}", pool.len()));
    }
    rng.partial_shuffle(&mut pool, b);
    pool.truncate(b);
    Ok(pool)
}

/// Fast path: tracks only which peer occupies which node of `G(0)`.
///
/// Neighborhoods are read off as the occupants of the `G(0)` neighbors of a
/// peer's node, in `G(0)` adjacency order.
#[derive(Debug, Clone)]
pub struct PlacementState {
    topology0: Arc<Topology>,
    position: Vec<NodeId>,
    occupant: Vec<NodeId>,
    ensemble: ClockEnsemble,
    now: f64,
}

impl PlacementState {
    pub fn new(topology0: Arc<Topology>, rate: f64, master_seed: u64) -> Result<Self> {
        let ensemble = ClockEnsemble::centralized(&topology0, rate, master_seed)?;
        let n = topology0.node_count();
        Ok(Self {
            topology0,
            position: (0..n).collect(),
            occupant: (0..n).collect(),
            ensemble,
            now: 0.0,
        })
    }

    pub fn run_until(&mut self, horizon: f64) -> Result<u64> {
        if horizon < self.now {
            return invalid(format!(
                "horizon {horizon} is before the current time {}",
                self.now
            ));
        }
        let mut count = 0;
        while let Some(ev) = self.ensemble.next_until(horizon) {
            let (a, b) = self.topology0.edge(ev.slot);
            let (p, q) = (self.occupant[a], self.occupant[b]);
            self.occupant.swap(a, b);
            self.position[p] = b;
            self.position[q] = a;
            count += 1;
        }
        self.now = horizon;
        Ok(count)
    }

    /// Node of `G(0)` occupied by each peer; equals `γ_t`.
    pub fn positions(&self) -> &[NodeId] {
        &self.position
    }

    pub fn neighbors(&self, i: NodeId) -> Vec<NodeId> {
        self.topology0
            .neighbors(self.position[i])
            .iter()
            .map(|&v| self.occupant[v])
            .collect()
    }

    pub fn sample(&self, i: NodeId, b: usize, rng: &mut PrngState) -> Result<Vec<NodeId>> {
        sample_from(self.neighbors(i), b, rng)
    }
}
