use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use peerswap_core::analysis::{
    ks_uniform_test, outcome_domain, repetitions_needed, Histogram, OutcomeKey,
};
use peerswap_core::ideal::{format_time, PlacementState};
use peerswap_core::lockswap::{run_locked, LockedRunConfig, SwapOutcome};
use peerswap_core::netsim::DelayModel;
use peerswap_core::rng::{derive_seed, PrngState, Stream};
use peerswap_core::{NodeId, Topology};

use crate::config::{usage, CliError, CliResult, ExperimentConfig, Mode, Repetitions, Sampling};

/// Largest outcome domain the KS test is run on.
pub const KS_DOMAIN_LIMIT: u128 = 20_000_000;

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRow {
    pub run_index: u64,
    pub seed: u64,
    /// Sorted neighborhood of the observed peer.
    pub observation: Vec<NodeId>,
}

pub fn runs_csv(rows: &[RunRow]) -> String {
    let mut out = String::from("run_index,seed,observation_key\n");
    for r in rows {
        let key = OutcomeKey::neighborhood(r.observation.clone());
        writeln!(out, "{},{},{key}", r.run_index, r.seed).expect("String write");
    }
    out
}

pub fn parse_runs_csv(text: &str) -> CliResult<Vec<RunRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "run_index,seed,observation_key")) => {}
        _ => return usage("runs file must start with `run_index,seed,observation_key`"),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| {
            CliError::Core(peerswap_core::Error::Parse {
                line: i + 1,
                message: what.to_string(),
            })
        };
        let mut fields = line.split(',');
        let (Some(a), Some(b), Some(c), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three fields"));
        };
        let key: OutcomeKey = c.parse().map_err(|_| bad("bad observation key"))?;
        rows.push(RunRow {
            run_index: a.parse().map_err(|_| bad("bad run index"))?,
            seed: b.parse().map_err(|_| bad("bad seed"))?,
            observation: key.ids().to_vec(),
        });
    }
    Ok(rows)
}

/// Histogram of the observations: one outcome per run for neighborhoods,
/// one per neighborhood member in per-peer mode.
pub fn aggregate(rows: &[RunRow], sampling: Sampling) -> Histogram {
    let mut h = Histogram::new();
    for r in rows {
        match sampling {
            Sampling::Neighborhood => h.add(OutcomeKey::neighborhood(r.observation.clone())),
            Sampling::PerPeer => r
                .observation
                .iter()
                .for_each(|&p| h.add(OutcomeKey::peer(p))),
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsSummary {
    pub distance: f64,
    pub p_value: f64,
    pub total: u64,
    pub domain_size: u64,
    pub synth_seed: u64,
}

/// KS test against uniform draws seeded by the master seed, or `None`
/// when the domain is too large to enumerate.
pub fn uniformity(
    h: &Histogram,
    n: usize,
    d: usize,
    sampling: Sampling,
    master_seed: u64,
) -> CliResult<Option<KsSummary>> {
    let domain = outcome_domain(n, d, sampling.core())?;
    if domain > KS_DOMAIN_LIMIT || h.total() == 0 {
        return Ok(None);
    }
    let ks = ks_uniform_test(h, domain as usize, master_seed)?;
    Ok(Some(KsSummary {
        distance: ks.distance,
        p_value: ks.p_value,
        total: h.total(),
        domain_size: domain as u64,
        synth_seed: master_seed,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologySummary {
    pub nodes: usize,
    pub degree: Option<usize>,
    pub edges: usize,
    pub spectral_gap: f64,
}

impl TopologySummary {
    pub fn of(t: &Topology) -> Self {
        TopologySummary {
            nodes: t.node_count(),
            degree: t.regular_degree(),
            edges: t.edge_count(),
            spectral_gap: t.spectral_gap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramSummary {
    pub observations: u64,
    pub distinct: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Nearest-rank quantiles of an unsorted sample.
pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
    Some(Quantiles {
        p50: at(0.5),
        p90: at(0.9),
        p99: at(0.99),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LockedSummary {
    pub rings: usize,
    pub successes: usize,
    pub failures: usize,
    /// Mean over runs of successful swaps finished by the horizon, per second.
    pub throughput: f64,
    pub mean_duration: Option<f64>,
    pub duration_quantiles: Option<Quantiles>,
    pub audits: usize,
}

/// Swap outcomes of every locked run, with a leading run index.
pub fn swaps_csv(per_run: &[(u64, Vec<SwapOutcome>)]) -> String {
    let mut out = String::from("run_index,swap_id,start_time,end_time,outcome,initiator,partner\n");
    for (run, outcomes) in per_run {
        for o in outcomes {
            writeln!(
                out,
                "{run},{},{},{},{},{},{}",
                o.swap,
                format_time(o.start),
                format_time(o.end),
                if o.success { "success" } else { "fail" },
                o.initiator,
                o.partner
            )
            .expect("String write");
        }
    }
    out
}

fn summarize_locked(
    per_run: &[(u64, Vec<SwapOutcome>)],
    horizon: f64,
    audits: usize,
) -> CliResult<LockedSummary> {
    let all: Vec<&SwapOutcome> = per_run.iter().flat_map(|(_, o)| o).collect();
    let durations: Vec<f64> = all
        .iter()
        .filter(|o| o.success)
        .map(|o| o.duration())
        .collect();
    let throughput = if horizon > 0.0 {
        let total: f64 = per_run
            .iter()
            .map(|(_, o)| peerswap_core::lockswap::throughput(o, horizon))
            .sum::<peerswap_core::Result<f64>>()?;
        total / per_run.len() as f64
    } else {
        0.0
    };
    Ok(LockedSummary {
        rings: all.len(),
        successes: durations.len(),
        failures: all.len() - durations.len(),
        throughput,
        mean_duration: (!durations.is_empty())
            .then(|| durations.iter().sum::<f64>() / durations.len() as f64),
        duration_quantiles: quantiles(&durations),
        audits,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub topology: TopologySummary,
    pub rate: f64,
    pub activation_rate: f64,
    pub repetitions: u64,
    pub histogram: HistogramSummary,
    pub ks: Option<KsSummary>,
    pub locked: Option<LockedSummary>,
    #[serde(skip)]
    pub runs: Vec<RunRow>,
    #[serde(skip)]
    pub counts: Histogram,
    #[serde(skip)]
    pub swaps: Vec<(u64, Vec<SwapOutcome>)>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    derive_seed(master_seed, Stream::Run, run_index)
}

fn resolve_repetitions(cfg: &ExperimentConfig, n: usize, d: usize) -> CliResult<u64> {
    match cfg.repetitions {
        Repetitions::Count(k) => Ok(k),
        Repetitions::Auto => {
            let k = repetitions_needed(n, d, cfg.sample_mode.core())?;
            u64::try_from(k)
                .map_err(|_| CliError::Usage(format!("{k} repetitions is not runnable")))
        }
    }
}

/// The observed peer's neighborhood after one ideal run.
pub fn ideal_observation(
    topology: &Arc<Topology>,
    rate: f64,
    horizon: f64,
    seed: u64,
    peer: NodeId,
) -> CliResult<Vec<NodeId>> {
    let mut s = PlacementState::new(topology.clone(), rate, seed)?;
    s.run_until(horizon)?;
    let d = topology.degree(s.positions()[peer]);
    let mut rng = PrngState::derived(seed, Stream::Sample, 0);
    let mut sample = s.sample(peer, d, &mut rng)?;
    sample.sort_unstable();
    Ok(sample)
}

struct LockedResult {
    observation: Vec<NodeId>,
    outcomes: Vec<SwapOutcome>,
    audits: usize,
}

fn locked_run(
    topology: &Arc<Topology>,
    cfg: &LockedRunConfig,
    peer: NodeId,
) -> CliResult<LockedResult> {
    let run = run_locked(topology.clone(), cfg)?;
    let mut observation = run.network.neighbors(peer);
    observation.sort_unstable();
    Ok(LockedResult {
        observation,
        outcomes: run.outcomes,
        audits: run.audits,
    })
}

/// Runs every repetition on a pool of `cfg.workers` threads. Results are
/// reduced in run order, so the worker count never changes the output.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Report> {
    let topology = Arc::new(cfg.topology.load()?);
    let (n, edges) = (topology.node_count(), topology.edge_count());
    let d = topology
        .regular_degree()
        .ok_or_else(|| CliError::Usage("experiments need a regular topology".into()))?;
    if cfg.observed_peer >= n {
        return usage(format!(
            "observed peer {} is not among the {n} peers",
            cfg.observed_peer
        ));
    }
    let rate = cfg.rate.per_edge(edges);
    let repetitions = resolve_repetitions(cfg, n, d)?;
    let delay: DelayModel = cfg.delay.load()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cfg.workers)))?;

    let results: Vec<(RunRow, Option<LockedResult>)> = pool.install(|| {
        (0..repetitions)
            .into_par_iter()
            .map(|run_index| {
                let seed = run_seed(cfg.master_seed, run_index);
                let (observation, locked) = match cfg.mode {
                    Mode::RunLocked => {
                        let lc = LockedRunConfig {
                            rate,
                            delay: delay.clone(),
                            horizon: cfg.horizon,
                            master_seed: seed,
                            quiesce_every: cfg.quiesce_every,
                        };
                        let r = locked_run(&topology, &lc, cfg.observed_peer)?;
                        (r.observation.clone(), Some(r))
                    }
                    _ => (
                        ideal_observation(&topology, rate, cfg.horizon, seed, cfg.observed_peer)?,
                        None,
                    ),
                };
                Ok((
                    RunRow {
                        run_index,
                        seed,
                        observation,
                    },
                    locked,
                ))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let mut runs = Vec::with_capacity(results.len());
    let mut swaps = Vec::new();
    let mut audits = 0;
    for (row, locked) in results {
        if let Some(l) = locked {
            audits += l.audits;
            swaps.push((row.run_index, l.outcomes));
        }
        runs.push(row);
    }
    let counts = aggregate(&runs, cfg.sample_mode);
    let ks = uniformity(&counts, n, d, cfg.sample_mode, cfg.master_seed)?;
    let locked = match cfg.mode {
        Mode::RunLocked => Some(summarize_locked(&swaps, cfg.horizon, audits)?),
        _ => None,
    };
    let report = Report {
        config: cfg.clone(),
        topology: TopologySummary::of(&topology),
        rate,
        activation_rate: rate * edges as f64,
        repetitions,
        histogram: HistogramSummary {
            observations: counts.total(),
            distinct: counts.distinct(),
        },
        ks,
        locked,
        runs,
        counts,
        swaps,
    };
    if let Some(dir) = &cfg.out_dir {
        write_outputs(dir, &report)?;
    }
    Ok(report)
}

pub fn write_outputs(dir: &Path, report: &Report) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("runs.csv"), runs_csv(&report.runs))?;
    std::fs::write(dir.join("histogram.csv"), report.counts.to_csv())?;
    if report.config.mode == Mode::RunLocked {
        std::fs::write(dir.join("swaps.csv"), swaps_csv(&report.swaps))?;
    }
    std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    Ok(())
}
