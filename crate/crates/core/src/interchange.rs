//! Interchange process, random walk and exact transient laws by uniformization.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::clocks::ClockEnsemble;
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::topology::{NodeId, Topology};

/// Largest `|(V)_k|` handled by [`exact_transient`].
pub const STATE_LIMIT: usize = 20_000;
/// Largest state space for the dense stationary solve.
pub const STATIONARY_LIMIT: usize = 1_500;
const POISSON_TAIL: f64 = 1e-12;

/// `f_e(v)` for `e = {a, b}`.
pub fn transpose(e: (NodeId, NodeId), v: NodeId) -> NodeId {
    if v == e.0 {
        e.1
    } else if v == e.1 {
        e.0
    } else {
        v
    }
}

/// Coordinatewise `f_e`.
pub fn ip_apply(x: &[NodeId], e: (NodeId, NodeId)) -> Vec<NodeId> {
    x.iter().map(|&v| transpose(e, v)).collect()
}

fn check_particles(n: usize, x: &[NodeId]) -> Result<()> {
    let mut seen = vec![false; n];
    for &v in x {
        if v >= n || seen[v] {
            return invalid(format!(
                "particle positions {x:?} are not distinct nodes of 0..{n}"
            ));
        }
        seen[v] = true;
    }
    Ok(())
}

/// `IP(k, G)` driven by the same clock stream an ideal run with `master_seed` uses.
pub fn ip_simulate(
    topology: &Topology,
    x0: &[NodeId],
    rate: f64,
    master_seed: u64,
    horizon: f64,
) -> Result<Vec<NodeId>> {
    check_particles(topology.node_count(), x0)?;
    let mut ensemble = ClockEnsemble::centralized(topology, rate, master_seed)?;
    let mut x = x0.to_vec();
    while let Some(ev) = ensemble.next_until(horizon) {
        x = ip_apply(&x, topology.edge(ev.slot));
    }
    Ok(x)
}

/// `RW(G)` over the same clock stream: only rings next to the walker move it.
pub fn rw_simulate(
    topology: &Topology,
    v0: NodeId,
    rate: f64,
    master_seed: u64,
    horizon: f64,
) -> Result<NodeId> {
    check_particles(topology.node_count(), &[v0])?;
    let mut ensemble = ClockEnsemble::centralized(topology, rate, master_seed)?;
    let mut v = v0;
    while let Some(ev) = ensemble.next_until(horizon) {
        let (a, b) = topology.edge(ev.slot);
        if v == a {
            v = b;
        } else if v == b {
            v = a;
        }
    }
    Ok(v)
}

/// `(V)_k` in lexicographic order with a reverse index.
#[derive(Debug, Clone)]
pub struct StateSpace {
    n: usize,
    states: Vec<Vec<NodeId>>,
    index: HashMap<Vec<NodeId>, usize>,
}

impl StateSpace {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return invalid(format!("k = {k} must lie in 1..={n}"));
        }
        let size = falling_factorial(n, k);
        if size > STATE_LIMIT as u128 {
            return Err(Error::TooLarge {
                states: size,
                limit: STATE_LIMIT,
            });
        }
        let mut states = Vec::with_capacity(size as usize);
        let mut current = Vec::with_capacity(k);
        let mut used = vec![false; n];
        enumerate(n, k, &mut current, &mut used, &mut states);
        let index = states
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        Ok(Self { n, states, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<NodeId>] {
        &self.states
    }

    pub fn index_of(&self, x: &[NodeId]) -> Option<usize> {
        self.index.get(x).copied()
    }

    /// For each edge slot, the state permutation `x ↦ f_e(x)` as indices.
    fn edge_actions(&self, topology: &Topology) -> Vec<Vec<usize>> {
        topology
            .edges()
            .iter()
            .map(|&e| {
                self.states
                    .iter()
                    .map(|x| self.index[&ip_apply(x, e)])
                    .collect()
            })
            .collect()
    }
}

fn enumerate(
    n: usize,
    k: usize,
    current: &mut Vec<NodeId>,
    used: &mut [bool],
    out: &mut Vec<Vec<NodeId>>,
) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for v in 0..n {
        if !used[v] {
            used[v] = true;
            current.push(v);
            enumerate(n, k, current, used, out);
            current.pop();
            used[v] = false;
        }
    }
}

/// `n! / (n - k)!`.
pub fn falling_factorial(n: usize, k: usize) -> u128 {
    (0..k)
        .try_fold(1u128, |acc, i| acc.checked_mul((n - i) as u128))
        .unwrap_or(u128::MAX)
}

/// Law of `IP(k, G)` at a fixed time, over `(V)_k` in lexicographic order.
#[derive(Debug, Clone)]
pub struct TransientDistribution {
    pub states: Vec<Vec<NodeId>>,
    pub probabilities: Vec<f64>,
    pub time: f64,
}

impl TransientDistribution {
    pub fn tv_to_uniform(&self) -> f64 {
        let u = 1.0 / self.probabilities.len() as f64;
        0.5 * self
            .probabilities
            .iter()
            .map(|p| (p - u).abs())
            .sum::<f64>()
    }

    /// `state_tuple,probability` CSV with tuples written as `a;b;c`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state_tuple,probability\n");
        for (x, p) in self.states.iter().zip(&self.probabilities) {
            let key: Vec<String> = x.iter().map(ToString::to_string).collect();
            writeln!(out, "{},{:e}", key.join(";"), p).expect("String write");
        }
        out
    }
}

/// Poisson(`mean`) weights, truncated once the remaining tail is below `1e-12`.
pub fn poisson_weights(mean: f64) -> Vec<f64> {
    let mut weights = Vec::new();
    let mut log_fact = 0.0;
    let mut total = 0.0;
    let cap = (mean + 50.0 * mean.sqrt() + 100.0) as usize;
    for m in 0..=cap {
        if m > 0 {
            log_fact += (m as f64).ln();
        }
        let log_w = if mean == 0.0 {
            if m == 0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            -mean + m as f64 * mean.ln() - log_fact
        };
        let w = log_w.exp();
        weights.push(w);
        total += w;
        if m as f64 >= mean && 1.0 - total < POISSON_TAIL {
            break;
        }
    }
    weights
}

/// Row `x0` of `P(horizon)` for `IP(k, G)` where every edge rings at `rate`.
///
/// Uniformizes with `Λ = rate·|E|`; the jump chain averages the `|E|`
/// transposition actions, so `P(t) = Σ_m Pois(m; Λt) · K^m`.
pub fn exact_transient(
    k: usize,
    topology: &Topology,
    x0: &[NodeId],
    rate: f64,
    horizon: f64,
) -> Result<TransientDistribution> {
    if x0.len() != k {
        return invalid(format!(
            "start state has {} particles, expected {k}",
            x0.len()
        ));
    }
    if !(rate > 0.0) || !(horizon >= 0.0) {
        return invalid("rate must be positive and horizon nonnegative");
    }
    let space = StateSpace::new(topology.node_count(), k)?;
    check_particles(space.n, x0)?;
    let start = space.index_of(x0).expect("valid start state is enumerated");
    let actions = space.edge_actions(topology);
    let edges = actions.len() as f64;
    let weights = poisson_weights(rate * edges * horizon);

    let mut v = vec![0.0; space.len()];
    v[start] = 1.0;
    let mut result = vec![0.0; space.len()];
    for (m, w) in weights.iter().enumerate() {
        if m > 0 {
            let mut next = vec![0.0; space.len()];
            for action in &actions {
                for (x, &y) in action.iter().enumerate() {
                    next[y] += v[x];
                }
            }
            for p in &mut next {
                *p /= edges;
            }
            v = next;
        }
        for (r, p) in result.iter_mut().zip(&v) {
            *r += w * p;
        }
    }
    let total: f64 = result.iter().sum();
    for r in &mut result {
        *r /= total;
    }
    Ok(TransientDistribution {
        states: space.states,
        probabilities: result,
        time: horizon,
    })
}

/// Stationary law of `IP(k, G)` from `πQ = 0, Σπ = 1` by dense elimination.
pub fn stationary_distribution(k: usize, topology: &Topology) -> Result<Vec<f64>> {
    let space = StateSpace::new(topology.node_count(), k)?;
    let s = space.len();
    if s > STATIONARY_LIMIT {
        return Err(Error::TooLarge {
            states: s as u128,
            limit: STATIONARY_LIMIT,
        });
    }
    // Rows of the system are the columns of Q (equations Σ_x π_x q(x,y) = 0),
    // with the last equation replaced by normalization.
    let mut a = vec![vec![0.0; s + 1]; s];
    for action in space.edge_actions(topology) {
        for (x, &y) in action.iter().enumerate() {
            if x != y {
                a[y][x] += 1.0;
                a[x][x] -= 1.0;
            }
        }
    }
    for col in 0..s {
        a[s - 1][col] = 1.0;
    }
    a[s - 1][s] = 1.0;
    solve_in_place(&mut a)
}

fn solve_in_place(a: &mut [Vec<f64>]) -> Result<Vec<f64>> {
    let s = a.len();
    for col in 0..s {
        let pivot = (col..s)
            .max_by(|&r, &q| a[r][col].abs().total_cmp(&a[q][col].abs()))
            .expect("nonempty range");
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::InvariantViolation(
                "singular stationary system".into(),
            ));
        }
        a.swap(col, pivot);
        for r in 0..s {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=s {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Ok((0..s).map(|r| a[r][s] / a[r][r]).collect())
}

/// Plug-in TV distance between the empirical law of `run_count` independent
/// `IP(k, G)` endpoints and the uniform law on `(V)_k`.
///
/// Run `r` uses the master seed `derive_seed(master_seed, Run, r)`.
pub fn empirical_tv_to_uniform(
    topology: &Topology,
    x0: &[NodeId],
    rate: f64,
    horizon: f64,
    run_count: usize,
    master_seed: u64,
) -> Result<f64> {
    if run_count == 0 {
        return invalid("run_count must be at least 1");
    }
    let k = x0.len();
    let size = falling_factorial(topology.node_count(), k);
    let endpoints = (0..run_count as u64)
        .into_par_iter()
        .map(|r| {
            ip_simulate(
                topology,
                x0,
                rate,
                derive_seed(master_seed, Stream::Run, r),
                horizon,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts: HashMap<Vec<NodeId>, usize> = HashMap::new();
    for x in endpoints {
        *counts.entry(x).or_default() += 1;
    }
    let u = 1.0 / size as f64;
    let observed: f64 = counts
        .values()
        .map(|&c| (c as f64 / run_count as f64 - u).abs())
        .sum();
    let unobserved = (size - counts.len() as u128) as f64 * u;
    Ok(0.5 * (observed + unobserved))
}
