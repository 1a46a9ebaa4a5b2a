//! Lock-based swap protocol: per-peer state machines exchanging messages.
//!
//! On a ring both peers holding the slot start the swap under the same
//! [`SwapId`]. Each side locks its other neighbors, sends its neighbor list to
//! the partner once all locks are granted, and executes once it also holds the
//! partner's list. Any refused lock fails the whole swap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::clocks::{ClockEnsemble, RingEvent};
use crate::error::{invalid, violation, Result};
use crate::ideal::format_time;
use crate::netsim::{DelayModel, Envelope, Protocol, SimStats, Simulation};
use crate::topology::{NodeId, Permutation, Slot, Topology};

/// Names one ring: the slot and the ring's index on that slot's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SwapId {
    pub slot: Slot,
    pub ring: usize,
}

impl fmt::Display for SwapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.slot, self.ring)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    LockRequest {
        swap: SwapId,
        initiator: NodeId,
        partner: NodeId,
    },
    LockResponse {
        swap: SwapId,
        success: bool,
    },
    Swap {
        swap: SwapId,
        neighbors: Vec<(NodeId, Slot)>,
    },
    SwapFail {
        swap: SwapId,
    },
    Unlock {
        swap: SwapId,
    },
    Replace {
        swap: SwapId,
        old: NodeId,
        new: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitiatorState {
    pub swap: SwapId,
    pub partner: NodeId,
    pub requested: Vec<NodeId>,
    pub awaiting: BTreeSet<NodeId>,
    pub partner_list: Option<Vec<(NodeId, Slot)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborState {
    pub swap: SwapId,
    pub requesters: Vec<NodeId>,
    /// Senders whose `Replace` has been applied.
    pub replaced: Vec<NodeId>,
    /// List positions already rewritten by this swap.
    pub substituted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lock {
    Unlocked,
    Initiator(Box<InitiatorState>),
    Neighbor(NeighborState),
}

/// Things the network needs to know about for metrics and `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorEvent {
    Executed {
        swap: SwapId,
        partner: NodeId,
    },
    /// An initiator gave up its lock, after success or failure.
    Released {
        swap: SwapId,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reaction {
    pub out: Vec<(NodeId, Message)>,
    pub events: Vec<ActorEvent>,
}

impl Reaction {
    fn send(&mut self, dst: NodeId, msg: Message) {
        self.out.push((dst, msg));
    }
}

/// One peer's protocol state.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerActor {
    pub id: NodeId,
    pub neighbors: Vec<(NodeId, Slot)>,
    pub lock: Lock,
}

impl PeerActor {
    pub fn new(id: NodeId, neighbors: Vec<(NodeId, Slot)>) -> Self {
        Self {
            id,
            neighbors,
            lock: Lock::Unlocked,
        }
    }

    pub fn is_unlocked(&self) -> bool {
        self.lock == Lock::Unlocked
    }

    pub fn on_clock_ring(&mut self, swap: SwapId, partner: NodeId) -> Reaction {
        let mut r = Reaction::default();
        if !self.is_unlocked() {
            r.send(partner, Message::SwapFail { swap });
            return r;
        }
        let requested: Vec<NodeId> = self
            .neighbors
            .iter()
            .map(|&(p, _)| p)
            .filter(|&p| p != partner)
            .collect();
        for &k in &requested {
            r.send(
                k,
                Message::LockRequest {
                    swap,
                    initiator: self.id,
                    partner,
                },
            );
        }
        if requested.is_empty() {
            r.send(
                partner,
                Message::Swap {
                    swap,
                    neighbors: self.neighbors.clone(),
                },
            );
        }
        self.lock = Lock::Initiator(Box::new(InitiatorState {
            swap,
            partner,
            awaiting: requested.iter().copied().collect(),
            requested,
            partner_list: None,
        }));
        r
    }

    pub fn on_message(&mut self, src: NodeId, msg: Message) -> Result<Reaction> {
        let mut r = Reaction::default();
        match msg {
            Message::LockRequest { swap, .. } => {
                let granted = match &mut self.lock {
                    Lock::Unlocked => {
                        self.lock = Lock::Neighbor(NeighborState {
                            swap,
                            requesters: vec![src],
                            replaced: Vec::new(),
                            substituted: Vec::new(),
                        });
                        true
                    }
                    Lock::Neighbor(st) if st.swap == swap => {
                        if !st.requesters.contains(&src) {
                            st.requesters.push(src);
                        }
                        true
                    }
                    _ => false,
                };
                r.send(
                    src,
                    Message::LockResponse {
                        swap,
                        success: granted,
                    },
                );
            }
            Message::LockResponse { swap, success } => match &mut self.lock {
                Lock::Initiator(st) if st.swap == swap => {
                    if !st.awaiting.remove(&src) {
                        return violation(format!(
                            "peer {} got an unexpected lock response from {src}",
                            self.id
                        ));
                    }
                    if !success {
                        self.fail(&mut r, true);
                    } else if st.awaiting.is_empty() {
                        r.send(
                            st.partner,
                            Message::Swap {
                                swap,
                                neighbors: self.neighbors.clone(),
                            },
                        );
                        if st.partner_list.is_some() {
                            self.execute(&mut r);
                        }
                    }
                }
                // A grant for a swap this peer already left: release it.
                _ if success => r.send(src, Message::Unlock { swap }),
                _ => {}
            },
            Message::Swap { swap, neighbors } => match &mut self.lock {
                Lock::Initiator(st) if st.swap == swap && st.partner == src => {
                    if st.partner_list.replace(neighbors).is_some() {
                        return violation(format!(
                            "peer {} got two lists for swap {swap}",
                            self.id
                        ));
                    }
                    if st.awaiting.is_empty() {
                        self.execute(&mut r);
                    }
                }
                _ => r.send(src, Message::SwapFail { swap }),
            },
            Message::SwapFail { swap } => {
                if matches!(&self.lock, Lock::Initiator(st) if st.swap == swap && st.partner == src)
                {
                    self.fail(&mut r, false);
                }
            }
            Message::Unlock { swap } => {
                if matches!(&self.lock, Lock::Neighbor(st) if st.swap == swap) {
                    self.lock = Lock::Unlocked;
                }
            }
            Message::Replace { swap, old, new } => {
                let Lock::Neighbor(st) = &mut self.lock else {
                    return violation(format!(
                        "peer {} got Replace for {swap} while not locked",
                        self.id
                    ));
                };
                if st.swap != swap || !st.requesters.contains(&src) {
                    return violation(format!(
                        "peer {} got Replace for {swap} from {src} outside its lock",
                        self.id
                    ));
                }
                if st.replaced.contains(&old) {
                    return Ok(r);
                }
                let idx = (0..self.neighbors.len())
                    .find(|i| self.neighbors[*i].0 == old && !st.substituted.contains(i));
                let Some(idx) = idx else {
                    return violation(format!("peer {} has no entry {old} to replace", self.id));
                };
                self.neighbors[idx].0 = new;
                st.substituted.push(idx);
                st.replaced.push(old);
                if st.replaced.len() == st.requesters.len() {
                    self.lock = Lock::Unlocked;
                }
            }
        }
        Ok(r)
    }

    /// Releases every requested neighbor and, unless the partner already
    /// failed the swap, tells it the swap is off.
    fn fail(&mut self, r: &mut Reaction, notify_partner: bool) {
        let Lock::Initiator(st) = std::mem::replace(&mut self.lock, Lock::Unlocked) else {
            unreachable!("fail is only called by initiators");
        };
        for &k in &st.requested {
            r.send(k, Message::Unlock { swap: st.swap });
        }
        if notify_partner {
            r.send(st.partner, Message::SwapFail { swap: st.swap });
        }
        r.events.push(ActorEvent::Released { swap: st.swap });
    }

    fn execute(&mut self, r: &mut Reaction) {
        let Lock::Initiator(st) = std::mem::replace(&mut self.lock, Lock::Unlocked) else {
            unreachable!("execute is only called by initiators");
        };
        let InitiatorState {
            swap,
            partner,
            requested,
            partner_list,
            ..
        } = *st;
        for &k in &requested {
            r.send(
                k,
                Message::Replace {
                    swap,
                    old: self.id,
                    new: partner,
                },
            );
        }
        let id = self.id;
        self.neighbors = partner_list
            .expect("execute requires the partner's list")
            .into_iter()
            .map(|(p, s)| (if p == id { partner } else { p }, s))
            .collect();
        r.events.push(ActorEvent::Executed { swap, partner });
        r.events.push(ActorEvent::Released { swap });
    }
}

/// What happened to one ring.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapOutcome {
    pub swap: SwapId,
    pub start: f64,
    /// Last time an endpoint released its initiator lock.
    pub end: f64,
    pub success: bool,
    pub initiator: NodeId,
    pub partner: NodeId,
    open: usize,
}

impl SwapOutcome {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// `swap_id,start_time,end_time,outcome,initiator,partner` CSV.
pub fn outcome_csv(outcomes: &[SwapOutcome]) -> String {
    let mut out = String::from("swap_id,start_time,end_time,outcome,initiator,partner\n");
    for o in outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            o.swap,
            format_time(o.start),
            format_time(o.end),
            if o.success { "success" } else { "fail" },
            o.initiator,
            o.partner
        )
        .expect("String write");
    }
    out
}

/// Successful swaps completed by `horizon`, per second.
pub fn throughput(outcomes: &[SwapOutcome], horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return invalid("horizon must be positive");
    }
    let done = outcomes
        .iter()
        .filter(|o| o.success && o.end <= horizon)
        .count();
    Ok(done as f64 / horizon)
}

/// All peers of one run plus the `γ` accumulated from successful swaps.
#[derive(Debug, Clone)]
pub struct LockSwapNetwork {
    topology0: Arc<Topology>,
    peers: Vec<PeerActor>,
    gamma: Permutation,
    outcomes: BTreeMap<SwapId, SwapOutcome>,
}

impl LockSwapNetwork {
    pub fn new(topology0: Arc<Topology>) -> Self {
        let n = topology0.node_count();
        let mut lists = vec![Vec::new(); n];
        for (slot, &(a, b)) in topology0.edges().iter().enumerate() {
            lists[a].push((b, slot));
            lists[b].push((a, slot));
        }
        let peers = lists
            .into_iter()
            .enumerate()
            .map(|(id, mut l)| {
                l.sort_unstable();
                PeerActor::new(id, l)
            })
            .collect();
        Self {
            gamma: Permutation::identity(n),
            topology0,
            peers,
            outcomes: BTreeMap::new(),
        }
    }

    pub fn peer(&self, id: NodeId) -> &PeerActor {
        &self.peers[id]
    }

    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.peers[id].neighbors.iter().map(|&(p, _)| p).collect()
    }

    pub fn tracked_permutation(&self) -> &Permutation {
        &self.gamma
    }

    /// Outcomes ordered by ring time.
    pub fn outcomes(&self) -> Vec<SwapOutcome> {
        let mut v: Vec<SwapOutcome> = self.outcomes.values().cloned().collect();
        v.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.swap.cmp(&b.swap)));
        v
    }

    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.peers
            .iter()
            .flat_map(|p| {
                p.neighbors
                    .iter()
                    .map(move |&(q, _)| (p.id.min(q), p.id.max(q)))
            })
            .collect()
    }

    /// Checks the state expected once no locks are held and no messages are in flight.
    pub fn audit_quiescent(&self) -> Result<()> {
        let t = &self.topology0;
        for p in &self.peers {
            if !p.is_unlocked() {
                return violation(format!("peer {} still holds a lock: {:?}", p.id, p.lock));
            }
            if p.neighbors.len() != t.degree(self.gamma.apply(p.id)) {
                return violation(format!("peer {} has degree {}", p.id, p.neighbors.len()));
            }
            for &(q, s) in &p.neighbors {
                if !self.peers[q].neighbors.contains(&(p.id, s)) {
                    return violation(format!(
                        "peer {q} lacks the back edge to {} on slot {s}",
                        p.id
                    ));
                }
                if t.slot_of(self.gamma.apply(p.id), self.gamma.apply(q)) != Some(s) {
                    return violation(format!(
                        "slot {s} between {} and {q} is not their G(0) edge",
                        p.id
                    ));
                }
            }
        }
        if self.edge_set() != t.permuted_edge_set(&self.gamma.inverse()) {
            return violation("edge set differs from the relabeled G(0) edge set");
        }
        Ok(())
    }

    fn absorb(
        &mut self,
        from: NodeId,
        now: f64,
        reaction: Reaction,
        out: &mut Vec<Envelope<Message>>,
    ) -> Result<()> {
        for event in reaction.events {
            match event {
                ActorEvent::Executed { swap, partner } => {
                    let record = self.record(swap)?;
                    if !record.success {
                        record.success = true;
                        let (gi, gj) = (self.gamma.apply(from), self.gamma.apply(partner));
                        if self.topology0.slot_of(gi, gj) != Some(swap.slot) {
                            return violation(format!(
                                "swap {swap} between {from} and {partner} is not on its G(0) edge"
                            ));
                        }
                        self.gamma.swap_images(from, partner);
                    }
                }
                ActorEvent::Released { swap } => {
                    let record = self.record(swap)?;
                    record.open -= 1;
                    record.end = record.end.max(now);
                }
            }
        }
        out.extend(reaction.out.into_iter().map(|(dst, msg)| Envelope {
            src: from,
            dst,
            msg,
        }));
        Ok(())
    }

    fn record(&mut self, swap: SwapId) -> Result<&mut SwapOutcome> {
        match self.outcomes.get_mut(&swap) {
            Some(r) => Ok(r),
            None => violation(format!("event for unknown swap {swap}")),
        }
    }
}

impl Protocol for LockSwapNetwork {
    type Message = Message;

    fn on_ring(&mut self, ring: RingEvent, out: &mut Vec<Envelope<Message>>) -> Result<()> {
        let swap = SwapId {
            slot: ring.slot,
            ring: ring.index,
        };
        let holders: Vec<(NodeId, NodeId)> = self
            .peers
            .iter()
            .flat_map(|p| {
                p.neighbors
                    .iter()
                    .filter(|&&(_, s)| s == ring.slot)
                    .map(move |&(q, _)| (p.id, q))
            })
            .collect();
        let Some(&(initiator, partner)) = holders.first() else {
            return violation(format!("no peer holds slot {}", ring.slot));
        };
        self.outcomes.insert(
            swap,
            SwapOutcome {
                swap,
                start: ring.time,
                end: ring.time,
                success: false,
                initiator,
                partner,
                open: 0,
            },
        );
        for (p, q) in holders {
            if self.peers[p].is_unlocked() {
                self.record(swap)?.open += 1;
            }
            let reaction = self.peers[p].on_clock_ring(swap, q);
            self.absorb(p, ring.time, reaction, out)?;
        }
        Ok(())
    }

    fn on_message(
        &mut self,
        now: f64,
        envelope: Envelope<Message>,
        out: &mut Vec<Envelope<Message>>,
    ) -> Result<()> {
        let Envelope { src, dst, msg } = envelope;
        if dst >= self.peers.len() {
            return violation(format!("message addressed to unknown peer {dst}"));
        }
        let reaction = self.peers[dst].on_message(src, msg)?;
        self.absorb(dst, now, reaction, out)
    }
}

/// Settings for one lock-based run.
#[derive(Debug, Clone)]
pub struct LockedRunConfig {
    pub rate: f64,
    pub delay: DelayModel,
    pub horizon: f64,
    pub master_seed: u64,
    /// Drain and audit at this spacing of simulated time, if set.
    pub quiesce_every: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LockedRun {
    pub network: LockSwapNetwork,
    pub stats: SimStats,
    pub outcomes: Vec<SwapOutcome>,
    /// Number of quiescent points audited, including the final drain.
    pub audits: usize,
    pub drained_at: f64,
}

impl LockedRun {
    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.len() - self.successes()
    }

    pub fn throughput(&self, horizon: f64) -> Result<f64> {
        throughput(&self.outcomes, horizon)
    }
}

/// Runs the protocol to the horizon, then drains all messages and audits.
pub fn run_locked(topology0: Arc<Topology>, cfg: &LockedRunConfig) -> Result<LockedRun> {
    if !(cfg.horizon >= 0.0) {
        return invalid("horizon must be nonnegative");
    }
    if let Some(q) = cfg.quiesce_every {
        if !(q > 0.0) {
            return invalid("quiescence spacing must be positive");
        }
    }
    if let Some(size) = cfg.delay.trace_size() {
        if size < topology0.node_count() {
            return invalid(format!(
                "trace covers {size} peers, topology has {}",
                topology0.node_count()
            ));
        }
    }
    let ensemble = ClockEnsemble::centralized(&topology0, cfg.rate, cfg.master_seed)?;
    let network = LockSwapNetwork::new(topology0);
    let mut sim = Simulation::new(network, ensemble, cfg.delay.clone(), cfg.master_seed);
    let mut audits = 0;
    if let Some(q) = cfg.quiesce_every {
        loop {
            let next = sim.now() + q;
            if next >= cfg.horizon {
                break;
            }
            sim.run(next)?;
            sim.quiesce()?;
            sim.protocol().audit_quiescent()?;
            audits += 1;
        }
    }
    sim.run(cfg.horizon.max(sim.now()))?;
    let drained_at = sim.drain()?;
    sim.protocol().audit_quiescent()?;
    audits += 1;
    let stats = sim.stats();
    let network = sim.into_protocol();
    if let Some(open) = network.outcomes.values().find(|o| o.open != 0) {
        return violation(format!("swap {} never released its locks", open.swap));
    }
    Ok(LockedRun {
        outcomes: network.outcomes(),
        network,
        stats,
        audits,
        drained_at,
    })
}
