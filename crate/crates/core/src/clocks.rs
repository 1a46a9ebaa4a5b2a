//! Poisson clocks on edge slots and their merged ring stream.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, PrngState, Stream};
use crate::topology::{Slot, Topology};

/// Inverse-CDF exponential sample for a given uniform `u` in `[0, 1)`.
pub fn exponential_from_uniform(u: f64, rate: f64) -> f64 {
    -(1.0 - u).ln() / rate
}

/// One exponential inter-arrival time with the given rate.
pub fn exponential_draw(state: &mut PrngState, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    Ok(exponential_from_uniform(state.uniform(), rate))
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate.is_finite() && rate > 0.0) {
        return invalid(format!(
            "clock rate must be positive and finite, got {rate}"
        ));
    }
    Ok(())
}

/// A Poisson clock with memoized ring times `T_0 = 0 < T_1 < T_2 < ...`.
#[derive(Debug, Clone)]
pub struct SharedClock {
    rate: f64,
    seed: u64,
    rng: PrngState,
    times: Vec<f64>,
    cursor: usize,
}

impl SharedClock {
    pub fn new(seed: u64, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self {
            rate,
            seed,
            rng: PrngState::from_seed(seed),
            times: vec![0.0],
            cursor: 0,
        })
    }

    /// Clock agreed on by two peers from their private seeds.
    ///
    /// The combined seed is the wrapping sum, so argument order is irrelevant.
    pub fn shared(seed_i: u64, seed_j: u64, rate: f64) -> Result<Self> {
        Self::new(seed_i.wrapping_add(seed_j), rate)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of rings consumed through [`SharedClock::advance`].
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Time of the last consumed ring (`T_cursor`).
    pub fn current_time(&self) -> f64 {
        self.times[self.cursor]
    }

    /// `T_index`; any index may be queried in any order.
    pub fn ring(&mut self, index: usize) -> f64 {
        while self.times.len() <= index {
            // A zero draw has probability 2^-53; skipping it keeps ring
            // times strictly increasing.
            let z = loop {
                let z = exponential_from_uniform(self.rng.uniform(), self.rate);
                if z > 0.0 {
                    break z;
                }
            };
            let last = *self.times.last().expect("T_0 is always present");
            self.times.push(last + z);
        }
        self.times[index]
    }

    /// Consumes and returns the next ring time.
    pub fn advance(&mut self) -> f64 {
        self.cursor += 1;
        self.ring(self.cursor)
    }

    /// Next ring time without consuming it.
    pub fn peek(&mut self) -> f64 {
        self.ring(self.cursor + 1)
    }
}

/// A clock ring: slot, time and the ring's 1-based index on that slot's clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingEvent {
    pub slot: Slot,
    pub time: f64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    slot: Slot,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so that the max-heap pops the earliest (time, slot).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

/// One clock per edge slot, merged into a single time-ordered stream.
#[derive(Debug, Clone)]
pub struct ClockEnsemble {
    clocks: Vec<SharedClock>,
    queue: BinaryHeap<Pending>,
}

impl ClockEnsemble {
    /// Slot `s` uses the seed `derive_seed(master, Clock, s)`.
    pub fn centralized(topology: &Topology, rate: f64, master_seed: u64) -> Result<Self> {
        let seeds = (0..topology.edge_count() as u64)
            .map(|s| derive_seed(master_seed, Stream::Clock, s))
            .collect();
        Self::from_seeds(seeds, rate)
    }

    /// Slot `{i, j}` uses the shared seed `peer_seeds[i] + peer_seeds[j]`.
    pub fn decentralized(topology: &Topology, rate: f64, peer_seeds: &[u64]) -> Result<Self> {
        if peer_seeds.len() != topology.node_count() {
            return invalid("one seed per peer is required");
        }
        let seeds = topology
            .edges()
            .iter()
            .map(|&(a, b)| peer_seeds[a].wrapping_add(peer_seeds[b]))
            .collect();
        Self::from_seeds(seeds, rate)
    }

    fn from_seeds(seeds: Vec<u64>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        if seeds.is_empty() {
            return invalid("an ensemble needs at least one clock");
        }
        let mut clocks = seeds
            .into_iter()
            .map(|s| SharedClock::new(s, rate))
            .collect::<Result<Vec<_>>>()?;
        let queue = clocks
            .iter_mut()
            .enumerate()
            .map(|(slot, c)| Pending {
                time: c.peek(),
                slot,
            })
            .collect();
        Ok(Self { clocks, queue })
    }

    pub fn len(&self) -> usize {
        self.clocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clocks.is_empty()
    }

    pub fn clock(&self, slot: Slot) -> &SharedClock {
        &self.clocks[slot]
    }

    /// Time of the next ring.
    pub fn peek_time(&self) -> f64 {
        self.queue.peek().expect("ensemble is never empty").time
    }

    /// Pops the earliest pending ring and schedules that slot's following ring.
    pub fn next_ring(&mut self) -> RingEvent {
        let Pending { time, slot } = self.queue.pop().expect("ensemble is never empty");
        let clock = &mut self.clocks[slot];
        clock.advance();
        let index = clock.cursor();
        self.queue.push(Pending {
            time: clock.peek(),
            slot,
        });
        RingEvent { slot, time, index }
    }

    /// Pops the next ring if it is at or before `horizon`.
    pub fn next_until(&mut self, horizon: f64) -> Option<RingEvent> {
        (self.peek_time() <= horizon).then(|| self.next_ring())
    }

    /// Delays every not-yet-consumed ring by `shift` seconds.
    pub(crate) fn shift_pending(&mut self, after: f64, shift: f64) {
        for clock in &mut self.clocks {
            let start = clock.cursor + 1;
            for t in clock.times.iter_mut().skip(start) {
                if *t > after {
                    *t += shift;
                }
            }
        }
        self.queue = self
            .clocks
            .iter_mut()
            .enumerate()
            .map(|(slot, c)| Pending {
                time: c.peek(),
                slot,
            })
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverse_cdf_values() {
        assert_eq!(exponential_from_uniform(0.0, 3.0), 0.0);
        let u = 1.0 - (-1.0f64).exp();
        assert_abs_diff_eq!(exponential_from_uniform(u, 1.0), 1.0, epsilon = 1e-12);
        let mut rng = PrngState::from_seed(0);
        assert!(exponential_draw(&mut rng, 0.0).is_err());
        assert!(exponential_draw(&mut rng, -1.0).is_err());
    }

    #[test]
    fn mean_of_draws_at_rate_two() {
        let mut rng = PrngState::from_seed(123);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| exponential_draw(&mut rng, 2.0).unwrap())
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(mean, 0.5, epsilon = 0.005);
    }

    #[test]
    fn shared_clock_is_symmetric_and_increasing() {
        let mut a = SharedClock::shared(5, 7, 1.0).unwrap();
        let mut b = SharedClock::shared(7, 5, 1.0).unwrap();
        let mut last = 0.0;
        for k in 1..=1000 {
            let t = a.ring(k);
            assert_eq!(t.to_bits(), b.ring(k).to_bits());
            assert!(t > last);
            last = t;
        }
        assert_eq!(a.ring(0), 0.0);
    }

    #[test]
    fn ring_times_are_partial_sums() {
        let mut clock = SharedClock::new(99, 1.5).unwrap();
        let late = clock.ring(50);
        let mut rng = PrngState::from_seed(99);
        let mut sum = 0.0;
        for k in 1..=50 {
            sum += exponential_draw(&mut rng, 1.5).unwrap();
            assert_eq!(clock.ring(k), sum);
        }
        assert_eq!(late, sum);
    }

    #[test]
    fn first_ring_mean() {
        let n = 100_000;
        let rate = 4.0;
        let mean: f64 = (0..n)
            .map(|s| {
                SharedClock::new(derive_seed(1, Stream::Clock, s), rate)
                    .unwrap()
                    .ring(1)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean * rate - 1.0).abs() < 0.02);
    }

    #[test]
    fn single_edge_ensemble_replays_its_clock() {
        let t = Topology::new(2, vec![(0, 1)]).unwrap();
        let mut e = ClockEnsemble::centralized(&t, 1.0, 4).unwrap();
        let mut c = SharedClock::new(derive_seed(4, Stream::Clock, 0), 1.0).unwrap();
        for k in 1..=100 {
            let ev = e.next_ring();
            assert_eq!(ev.slot, 0);
            assert_eq!(ev.index, k);
            assert_eq!(ev.time, c.ring(k));
        }
    }

    #[test]
    fn merged_stream_is_sorted_interleaving() {
        let t = Topology::complete(5).unwrap();
        let mut e = ClockEnsemble::centralized(&t, 0.7, 8).unwrap();
        let horizon = 30.0;
        let mut merged = Vec::new();
        while let Some(ev) = e.next_until(horizon) {
            merged.push((ev.time, ev.slot));
        }
        let mut expected = Vec::new();
        for slot in 0..t.edge_count() {
            let mut c = SharedClock::new(derive_seed(8, Stream::Clock, slot as u64), 0.7).unwrap();
            let mut k = 1;
            while c.ring(k) <= horizon {
                expected.push((c.ring(k), slot));
                k += 1;
            }
        }
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        assert_eq!(merged, expected);
    }

    #[test]
    fn decentralized_views_agree() {
        let t = Topology::generate_regular(10, 3, 2).unwrap();
        let seeds: Vec<u64> = (0..10).map(|i| derive_seed(6, Stream::Peer, i)).collect();
        let mut e = ClockEnsemble::decentralized(&t, 1.0, &seeds).unwrap();
        for &(a, b) in t.edges() {
            let mut from_a = SharedClock::shared(seeds[a], seeds[b], 1.0).unwrap();
            let mut from_b = SharedClock::shared(seeds[b], seeds[a], 1.0).unwrap();
            for k in 1..20 {
                assert_eq!(from_a.ring(k).to_bits(), from_b.ring(k).to_bits());
            }
        }
        let mut last = 0.0;
        for _ in 0..500 {
            let ev = e.next_ring();
            assert!(ev.time >= last);
            last = ev.time;
        }
    }

    #[test]
    fn shift_moves_future_rings() {
        let t = Topology::complete(3).unwrap();
        let mut e = ClockEnsemble::centralized(&t, 1.0, 3).unwrap();
        let first = e.next_ring();
        let before = e.peek_time();
        e.shift_pending(first.time, 2.0);
        assert_abs_diff_eq!(e.peek_time(), before + 2.0, epsilon = 1e-12);
    }
}
