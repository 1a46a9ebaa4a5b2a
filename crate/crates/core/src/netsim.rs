//! Single-threaded discrete-event engine: clock rings plus delayed message delivery.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use crate::clocks::{ClockEnsemble, RingEvent};
use crate::error::{invalid, violation, Error, Result};
use crate::rng::{PrngState, Stream};
use crate::topology::NodeId;

/// One-way message latency model. All durations are in seconds.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    Zero,
    /// Independent uniform draw in `[0, max]` for every message.
    Uniform {
        max: f64,
    },
    /// Fixed delay per ordered peer pair.
    Trace {
        matrix: Vec<Vec<f64>>,
    },
}

impl DelayModel {
    pub fn uniform_ms(max_ms: f64) -> Result<Self> {
        if !(max_ms >= 0.0 && max_ms.is_finite()) {
            return invalid(format!(
                "maximum delay must be a nonnegative number, got {max_ms}"
            ));
        }
        Ok(Self::Uniform {
            max: max_ms / 1000.0,
        })
    }

    /// Square matrix of millisecond delays with a zero diagonal.
    pub fn trace_ms(matrix_ms: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix_ms.len();
        for (r, row) in matrix_ms.iter().enumerate() {
            if row.len() != n {
                return invalid(format!(
                    "trace row {r} has {} entries, expected {n}",
                    row.len()
                ));
            }
            if row[r] != 0.0 {
                return invalid(format!("trace diagonal entry {r} is not zero"));
            }
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return invalid(format!("trace row {r} contains invalid delay {v}"));
            }
        }
        Ok(Self::Trace {
            matrix: matrix_ms
                .into_iter()
                .map(|row| row.into_iter().map(|v| v / 1000.0).collect())
                .collect(),
        })
    }

    /// Parses a CSV trace: `n` rows of `n` comma-separated millisecond values.
    pub fn trace_from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("not a number: {:?}", f.trim()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::trace_ms(rows)
    }

    pub fn read_trace(path: impl AsRef<Path>) -> Result<Self> {
        Self::trace_from_csv(&std::fs::read_to_string(path)?)
    }

    /// Number of peers a trace covers, if this is a trace model.
    pub fn trace_size(&self) -> Option<usize> {
        match self {
            Self::Trace { matrix } => Some(matrix.len()),
            _ => None,
        }
    }

    pub fn deliver_delay(&self, src: NodeId, dst: NodeId, rng: &mut PrngState) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Uniform { max } => Ok(rng.uniform() * max),
            Self::Trace { matrix } => matrix
                .get(src)
                .and_then(|row| row.get(dst))
                .copied()
                .ok_or_else(|| {
                    Error::InvalidParameters(format!("no trace delay for pair ({src}, {dst})"))
                }),
        }
    }
}

/// A message in transit.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub src: NodeId,
    pub dst: NodeId,
    pub msg: M,
}

#[derive(Debug)]
struct Scheduled<M> {
    time: f64,
    seq: u64,
    envelope: Envelope<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<M> Eq for Scheduled<M> {}

impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Scheduled<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Message queue popping in `(time, sequence)` order.
#[derive(Debug)]
pub struct EventQueue<M> {
    heap: BinaryHeap<Scheduled<M>>,
    next_seq: u64,
    now: f64,
}

impl<M> Default for EventQueue<M> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
        }
    }
}

impl<M> EventQueue<M> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }

    /// Enqueues a delivery; times before the current time are rejected.
    pub fn schedule(&mut self, time: f64, envelope: Envelope<M>) -> Result<u64> {
        if !(time >= self.now) {
            return violation(format!(
                "event scheduled at {time}, before the current time {}",
                self.now
            ));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled {
            time,
            seq,
            envelope,
        });
        Ok(seq)
    }

    pub fn pop(&mut self) -> Option<(f64, u64, Envelope<M>)> {
        let s = self.heap.pop()?;
        self.now = s.time;
        Some((s.time, s.seq, s.envelope))
    }

    fn advance_to(&mut self, time: f64) {
        self.now = self.now.max(time);
    }
}

/// Event counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub events: u64,
    pub rings: u64,
    pub sent: u64,
    pub delivered: u64,
    pub in_flight: u64,
}

/// Reaction of a protocol to rings and deliveries.
pub trait Protocol {
    type Message;

    fn on_ring(&mut self, ring: RingEvent, out: &mut Vec<Envelope<Self::Message>>) -> Result<()>;

    fn on_message(
        &mut self,
        now: f64,
        envelope: Envelope<Self::Message>,
        out: &mut Vec<Envelope<Self::Message>>,
    ) -> Result<()>;
}

/// Drives a [`Protocol`] with clock rings and delayed messages.
///
/// At equal times, deliveries go before rings.
pub struct Simulation<P: Protocol> {
    protocol: P,
    ensemble: ClockEnsemble,
    queue: EventQueue<P::Message>,
    delay: DelayModel,
    rng: PrngState,
    stats: SimStats,
    last_time: f64,
}

impl<P: Protocol> Simulation<P> {
    /// Message delays draw from `derive_seed(master_seed, Delay, 0)`.
    pub fn new(protocol: P, ensemble: ClockEnsemble, delay: DelayModel, master_seed: u64) -> Self {
        Self {
            protocol,
            ensemble,
            queue: EventQueue::new(),
            delay,
            rng: PrngState::derived(master_seed, Stream::Delay, 0),
            stats: SimStats::default(),
            last_time: 0.0,
        }
    }

    pub fn protocol(&self) -> &P {
        &self.protocol
    }

    pub fn protocol_mut(&mut self) -> &mut P {
        &mut self.protocol
    }

    pub fn into_protocol(self) -> P {
        self.protocol
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            in_flight: self.queue.len() as u64,
            ..self.stats
        }
    }

    /// Processes every ring and delivery at or before `horizon`.
    pub fn run(&mut self, horizon: f64) -> Result<SimStats> {
        if horizon < self.now() {
            return invalid(format!(
                "horizon {horizon} is before the current time {}",
                self.now()
            ));
        }
        loop {
            let ring_time = self.ensemble.peek_time();
            match self.queue.peek_time() {
                Some(t) if t <= ring_time && t <= horizon => self.deliver_next()?,
                _ if ring_time <= horizon => self.ring_next()?,
                _ => break,
            }
        }
        self.queue.advance_to(horizon);
        Ok(self.stats())
    }

    /// Delivers messages until none are in flight, with no rings in between.
    ///
    /// Returns the time at which the network went quiet.
    pub fn drain(&mut self) -> Result<f64> {
        while !self.queue.is_empty() {
            self.deliver_next()?;
        }
        Ok(self.now())
    }

    /// Drains and then delays all future rings by the time the drain took,
    /// so the clock process is unchanged apart from the pause.
    pub fn quiesce(&mut self) -> Result<f64> {
        let start = self.now();
        let end = self.drain()?;
        if end > start {
            self.ensemble.shift_pending(start, end - start);
        }
        Ok(end)
    }

    fn check_order(&mut self, time: f64) -> Result<()> {
        if time < self.last_time {
            return violation(format!(
                "event at {time} processed after {}",
                self.last_time
            ));
        }
        self.last_time = time;
        Ok(())
    }

    fn ring_next(&mut self) -> Result<()> {
        let ring = self.ensemble.next_ring();
        self.check_order(ring.time)?;
        self.queue.advance_to(ring.time);
        self.stats.events += 1;
        self.stats.rings += 1;
        let mut out = Vec::new();
        self.protocol.on_ring(ring, &mut out)?;
        self.send_all(out)
    }

    fn deliver_next(&mut self) -> Result<()> {
        let (time, _, envelope) = self.queue.pop().expect("caller checked nonempty");
        self.check_order(time)?;
        self.stats.events += 1;
        self.stats.delivered += 1;
        let mut out = Vec::new();
        self.protocol.on_message(time, envelope, &mut out)?;
        self.send_all(out)
    }

    fn send_all(&mut self, out: Vec<Envelope<P::Message>>) -> Result<()> {
        let now = self.now();
        for envelope in out {
            if envelope.src == envelope.dst {
                return violation(format!("peer {} sent a message to itself", envelope.src));
            }
            let delay = self
                .delay
                .deliver_delay(envelope.src, envelope.dst, &mut self.rng)?;
            self.queue.schedule(now + delay, envelope)?;
            self.stats.sent += 1;
        }
        Ok(())
    }
}
