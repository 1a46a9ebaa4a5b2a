use std::sync::Arc;

use serde::Serialize;

use peerswap_core::ideal::{swap_log_csv, IdealState};
use peerswap_core::interchange::ip_simulate;
use peerswap_core::rng::{derive_seed, PrngState, Stream};
use peerswap_core::{NodeId, Topology};

use crate::config::{usage, CliResult, Mode, Settings};

pub const EQUIVALENCE_HORIZON: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceConfig {
    pub n_max: usize,
    pub seeds: u64,
    pub master_seed: u64,
    pub horizon: f64,
    pub out_dir: Option<std::path::PathBuf>,
}

impl EquivalenceConfig {
    pub fn resolve(mut s: Settings) -> CliResult<Self> {
        let cfg = EquivalenceConfig {
            n_max: s.take_or("n-max", 16)?,
            seeds: s.take_or("seeds", 100)?,
            master_seed: s.take_or("seed", 0)?,
            horizon: s.take_or("horizon", EQUIVALENCE_HORIZON)?,
            out_dir: s.take_str("out").map(Into::into),
        };
        s.finish(Mode::EquivalenceCheck)?;
        if cfg.n_max < 2 {
            return usage("`n-max` must be at least 2");
        }
        if !(cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
            return usage("`horizon` must be a nonnegative number");
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub case: u64,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub ideal: Vec<NodeId>,
    pub interchange: Vec<NodeId>,
    /// `time,slot,peer_a,peer_b` rows of every ring in the ideal run.
    #[serde(skip)]
    pub ring_log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub cases: u64,
    pub matched: u64,
    pub mismatch: Option<Mismatch>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Picks `n ≤ n_max` and a degree from {2, 3, 4} that admits a connected
/// regular graph; `n = 2` forces the single edge.
pub fn random_case(n_max: usize, rng: &mut PrngState) -> (usize, usize) {
    let n = 2 + rng.below(n_max - 1);
    if n == 2 {
        return (2, 1);
    }
    let choices: Vec<usize> = [2, 3, 4]
        .into_iter()
        .filter(|&d| d < n && (n * d) % 2 == 0)
        .collect();
    (n, choices[rng.below(choices.len())])
}

/// Test hook: replaces the slot of one swap with the next slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub swap_index: usize,
}

pub fn equivalence_check(cfg: &EquivalenceConfig) -> CliResult<EquivalenceReport> {
    equivalence_check_with(cfg, None)
}

pub fn equivalence_check_with(
    cfg: &EquivalenceConfig,
    corruption: Option<Corruption>,
) -> CliResult<EquivalenceReport> {
    let mut matched = 0;
    for case in 0..cfg.seeds {
        let mut rng = PrngState::derived(cfg.master_seed, Stream::Topology, case);
        let (n, d) = random_case(cfg.n_max, &mut rng);
        let seed = derive_seed(cfg.master_seed, Stream::Run, case);
        let t = Arc::new(Topology::generate_regular(n, d, seed)?);
        let mut ideal = IdealState::new(t.clone(), 1.0, seed)?;
        let mut log = ideal.run_until(cfg.horizon)?;
        if let Some(c) = corruption {
            ideal = IdealState::new(t.clone(), 1.0, seed)?;
            for (k, r) in log.iter_mut().enumerate() {
                let slot = if k == c.swap_index {
                    (r.slot + 1) % t.edge_count()
                } else {
                    r.slot
                };
                *r = ideal.apply_swap(slot, r.time)?;
            }
        }
        ideal.audit()?;
        let placement = ideal.placement_from_lists()?;
        let identity: Vec<NodeId> = (0..n).collect();
        let ip = ip_simulate(&t, &identity, 1.0, seed, cfg.horizon)?;
        if placement != ip || ideal.tracked_permutation().as_slice() != ip.as_slice() {
            return Ok(EquivalenceReport {
                cases: case + 1,
                matched,
                mismatch: Some(Mismatch {
                    case,
                    seed,
                    n,
                    d,
                    ideal: placement,
                    interchange: ip,
                    ring_log: swap_log_csv(&log),
                }),
            });
        }
        matched += 1;
    }
    Ok(EquivalenceReport {
        cases: cfg.seeds,
        matched,
        mismatch: None,
    })
}
