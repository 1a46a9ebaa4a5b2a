use std::sync::Arc;

use peerswap_core::ideal::IdealState;
use peerswap_core::lockswap::{run_locked, LockedRunConfig, Message, PeerActor};
use peerswap_core::netsim::DelayModel;
use peerswap_core::rng::PrngState;
use peerswap_core::Topology;

fn random_trace(n: usize, seed: u64) -> DelayModel {
    let mut rng = PrngState::from_seed(seed);
    let mut m = vec![vec![0.0; n]; n];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            if r != c {
                *v = 5.0 + 150.0 * rng.uniform();
            }
        }
    }
    DelayModel::trace_ms(m).unwrap()
}

#[test]
fn liveness_and_safety_across_delay_models() {
    let t = Arc::new(Topology::generate_regular(40, 4, 21).unwrap());
    let models = [
        DelayModel::Zero,
        DelayModel::uniform_ms(100.0).unwrap(),
        DelayModel::uniform_ms(500.0).unwrap(),
        random_trace(40, 3),
    ];
    for (k, delay) in models.into_iter().enumerate() {
        let mut rings = 0;
        for seed in 0..4u64 {
            let cfg = LockedRunConfig {
                rate: 0.5,
                delay: delay.clone(),
                horizon: 40.0,
                master_seed: seed * 10 + k as u64,
                quiesce_every: Some(4.0),
            };
            let run = run_locked(t.clone(), &cfg).unwrap();
            rings += run.outcomes.len();
            assert_eq!(run.stats.sent, run.stats.delivered);
        }
        assert!(rings >= 2_500, "model {k}: only {rings} rings");
    }
}

#[test]
fn heavy_contention_without_quiescence_points() {
    let t = Arc::new(Topology::generate_regular(64, 4, 5).unwrap());
    for seed in 0..5 {
        let cfg = LockedRunConfig {
            rate: 50.0 / 128.0,
            delay: DelayModel::uniform_ms(200.0).unwrap(),
            horizon: 30.0,
            master_seed: seed,
            quiesce_every: None,
        };
        let run = run_locked(t.clone(), &cfg).unwrap();
        assert!(run.failures() > 0);
        assert!(run.successes() > 0);
    }
}

#[test]
fn identical_runs_are_identical() {
    let t = Arc::new(Topology::generate_regular(32, 3, 2).unwrap());
    let cfg = LockedRunConfig {
        rate: 1.0,
        delay: DelayModel::uniform_ms(80.0).unwrap(),
        horizon: 15.0,
        master_seed: 4,
        quiesce_every: Some(5.0),
    };
    let a = run_locked(t.clone(), &cfg).unwrap();
    let b = run_locked(t, &cfg).unwrap();
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.outcomes, b.outcomes);
    assert_eq!(
        a.network.tracked_permutation(),
        b.network.tracked_permutation()
    );
}

#[test]
fn zero_delay_sparse_rate_throughput_matches_ring_rate() {
    let t = Arc::new(Topology::generate_regular(32, 4, 6).unwrap());
    let rate = 0.05;
    let horizon = 200.0;
    let cfg = LockedRunConfig {
        rate,
        delay: DelayModel::Zero,
        horizon,
        master_seed: 8,
        quiesce_every: None,
    };
    let run = run_locked(t.clone(), &cfg).unwrap();
    assert_eq!(run.failures(), 0);
    let expected = t.edge_count() as f64 * rate;
    let measured = run.throughput(horizon).unwrap();
    let sd = (expected / horizon).sqrt();
    assert!(
        (measured - expected).abs() < 4.0 * sd,
        "{measured} vs {expected}"
    );
    assert!(run.outcomes.iter().all(|o| o.duration() == 0.0));

    let mut ideal = IdealState::new(t, rate, 8).unwrap();
    ideal.run_until(horizon).unwrap();
    assert_eq!(
        run.network.tracked_permutation(),
        ideal.tracked_permutation()
    );
}

/// Delivers queued messages in FIFO order between hand-built actors.
fn pump(
    peers: &mut [PeerActor],
    mut queue: Vec<(usize, usize, Message)>,
) -> Vec<(usize, usize, Message)> {
    let mut log = Vec::new();
    while !queue.is_empty() {
        let (src, dst, msg) = queue.remove(0);
        log.push((src, dst, msg.clone()));
        let r = peers[dst].on_message(src, msg).unwrap();
        queue.extend(r.out.into_iter().map(|(d, m)| (dst, d, m)));
    }
    log
}

fn actors(t: &Topology) -> Vec<PeerActor> {
    (0..t.node_count())
        .map(|i| {
            let mut l: Vec<(usize, usize)> = t
                .neighbors(i)
                .iter()
                .map(|&j| (j, t.slot_of(i, j).unwrap()))
                .collect();
            l.sort_unstable();
            PeerActor::new(i, l)
        })
        .collect()
}

#[test]
fn uncontended_exchange_matches_ideal_swap() {
    // 0 and 1 adjacent, each with two private neighbors.
    let t = Topology::new(6, vec![(0, 1), (0, 2), (0, 3), (1, 4), (1, 5)]).unwrap();
    let mut peers = actors(&t);
    let swap = peerswap_core::lockswap::SwapId { slot: 0, ring: 1 };
    let mut queue = Vec::new();
    for (p, q) in [(0, 1), (1, 0)] {
        let r = peers[p].on_clock_ring(swap, q);
        queue.extend(r.out.into_iter().map(|(d, m)| (p, d, m)));
    }
    pump(&mut peers, queue);
    let mut ideal = IdealState::new(Arc::new(t), 1.0, 0).unwrap();
    ideal.apply_swap(0, 0.0).unwrap();
    for (i, p) in peers.iter().enumerate() {
        assert!(p.is_unlocked());
        assert_eq!(p.neighbors, ideal.neighbor_entries(i));
    }
}

#[test]
fn pre_locked_neighbor_fails_the_swap() {
    let t = Topology::new(6, vec![(0, 1), (0, 2), (0, 3), (1, 4), (1, 5)]).unwrap();
    let mut peers = actors(&t);
    let other = peerswap_core::lockswap::SwapId { slot: 9, ring: 1 };
    peers[3]
        .on_message(
            5,
            Message::LockRequest {
                swap: other,
                initiator: 5,
                partner: 4,
            },
        )
        .unwrap();
    let swap = peerswap_core::lockswap::SwapId { slot: 0, ring: 1 };
    let r = peers[0].on_clock_ring(swap, 1);
    let queue: Vec<_> = r.out.into_iter().map(|(d, m)| (0, d, m)).collect();
    let log = pump(&mut peers, queue);
    let from_initiator =
        |pred: fn(&Message) -> bool| log.iter().filter(|(s, _, m)| *s == 0 && pred(m)).count();
    assert_eq!(from_initiator(|m| matches!(m, Message::Unlock { .. })), 2);
    assert_eq!(from_initiator(|m| matches!(m, Message::SwapFail { .. })), 1);
    assert!(peers[0].is_unlocked() && peers[2].is_unlocked());
    assert_eq!(peers[0].neighbors, actors(&t)[0].neighbors);
}
