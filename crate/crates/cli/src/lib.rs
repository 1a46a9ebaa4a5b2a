//! Experiment orchestration for the swap-based peer sampler: configuration,
//! seeded repetitions, parallel scheduling and report files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod equivalence;
pub mod experiment;

use std::path::PathBuf;

use serde::Serialize;

use peerswap_core::analysis::{
    bound_ip_mixing, bound_rw_mixing, bound_sample_convergence, BoundsInput,
};
use peerswap_core::topology::steer_gap;
use peerswap_core::Topology;

use config::{usage, ClockSpeed, Sampling};
pub use config::{CliError, CliResult, ExperimentConfig, Mode, Settings};
use equivalence::{equivalence_check, EquivalenceConfig};
use experiment::{
    aggregate, parse_runs_csv, run_experiment, uniformity, HistogramSummary, KsSummary,
};

/// Runs one subcommand and returns what it prints on success.
pub fn execute(mode: Mode, settings: Settings) -> CliResult<String> {
    match mode {
        Mode::GenTopology => gen_topology(settings),
        Mode::RunIdeal | Mode::RunLocked => {
            let cfg = ExperimentConfig::resolve(mode, settings)?;
            Ok(run_experiment(&cfg)?.to_json())
        }
        Mode::EquivalenceCheck => {
            let cfg = EquivalenceConfig::resolve(settings)?;
            let report = equivalence_check(&cfg)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(dir) = &cfg.out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("report.json"), json.clone() + "\n")?;
                if let Some(m) = &report.mismatch {
                    std::fs::write(dir.join("mismatch_log.csv"), &m.ring_log)?;
                }
            }
            match report.mismatch {
                None => Ok(json),
                Some(m) => Err(CliError::Core(peerswap_core::Error::InvariantViolation(format!(
                    "case {} (n = {}, d = {}, seed = {}): ideal placement {:?} differs from interchange placement {:?}\n{}",
                    m.case, m.n, m.d, m.seed, m.ideal, m.interchange, m.ring_log
                )))),
            }
        }
        Mode::Analyze => analyze(settings),
        Mode::Bounds => bounds(settings),
    }
}

#[derive(Debug, Serialize)]
struct TopologyInfo {
    nodes: usize,
    degree: usize,
    edges: usize,
    spectral_gap: f64,
    path: Option<PathBuf>,
}

/// `n`, `d`, `seed`; optionally steered towards `target-gap`.
fn gen_topology(mut s: Settings) -> CliResult<String> {
    let n: usize = s.require("n")?;
    let d: usize = s.require("d")?;
    let seed: u64 = s.take_or("seed", 0)?;
    let target: Option<f64> = s.take("target-gap")?;
    let tolerance: f64 = s.take_or("gap-tolerance", 0.01)?;
    let steps: usize = s.take_or("steer-steps", 20_000)?;
    let out: Option<PathBuf> = s.take_str("out").map(Into::into);
    s.finish(Mode::GenTopology)?;
    let mut t = Topology::generate_regular(n, d, seed)?;
    if let Some(target) = target {
        t = steer_gap(&t, target, tolerance, seed, steps)?.0;
    }
    match out {
        None => Ok(t.to_text()?),
        Some(path) => {
            t.write_file(&path)?;
            let info = TopologyInfo {
                nodes: n,
                degree: d,
                edges: t.edge_count(),
                spectral_gap: t.spectral_gap(),
                path: Some(path),
            };
            Ok(serde_json::to_string_pretty(&info).expect("info serializes"))
        }
    }
}

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    runs: usize,
    sample_mode: Sampling,
    histogram: HistogramSummary,
    ks: Option<KsSummary>,
}

/// Recomputes the histogram and KS test from a `runs.csv`.
fn analyze(mut s: Settings) -> CliResult<String> {
    let path: PathBuf = s.require::<String>("runs")?.into();
    let n: usize = s.require("n")?;
    let d: usize = s.require("d")?;
    let sampling: Sampling = s.take_or("sample-mode", Sampling::Neighborhood)?;
    let seed: u64 = s.take_or("seed", 0)?;
    let out: Option<PathBuf> = s.take_str("out").map(Into::into);
    s.finish(Mode::Analyze)?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let rows = parse_runs_csv(&text)?;
    if let Some(r) = rows.iter().find(|r| r.observation.iter().any(|&p| p >= n)) {
        return usage(format!(
            "run {} observes a peer outside 0..{n}",
            r.run_index
        ));
    }
    let h = aggregate(&rows, sampling);
    let report = AnalyzeReport {
        runs: rows.len(),
        sample_mode: sampling,
        histogram: HistogramSummary {
            observations: h.total(),
            distinct: h.distinct(),
        },
        ks: uniformity(&h, n, d, sampling, seed)?,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("histogram.csv"), h.to_csv())?;
        std::fs::write(dir.join("report.json"), json.clone() + "\n")?;
    }
    Ok(json)
}

#[derive(Debug, Serialize)]
struct BoundsReport {
    n: usize,
    d: usize,
    spectral_gap: f64,
    mean_period: f64,
    rw_mixing: f64,
    rw_mixing_quarter: f64,
    ip_mixing: f64,
    sample_convergence: f64,
}

/// All three bound calculators; `λ` comes from `lambda` or a topology file.
fn bounds(mut s: Settings) -> CliResult<String> {
    let (n, d, lambda) = match s.take_str("topology") {
        Some(path) => {
            let t = Topology::read_file(&path)?;
            let d = t
                .regular_degree()
                .ok_or_else(|| CliError::Usage("bounds need a regular topology".into()))?;
            if s.contains("lambda") || s.contains("n") || s.contains("d") {
                return usage("give either `topology` or `n`, `d` and `lambda`");
            }
            (t.node_count(), d, t.spectral_gap())
        }
        None => (s.require("n")?, s.require("d")?, s.require("lambda")?),
    };
    let alpha = match ClockSpeed::resolve(&mut s)? {
        ClockSpeed::Rate(r) => 1.0 / r,
        ClockSpeed::MeanPeriod(p) => p,
        ClockSpeed::Activation(_) => return usage("`activation-rate` has no meaning for bounds"),
    };
    let input = BoundsInput {
        n,
        d,
        lambda,
        eps: s.take_or("eps", 0.25)?,
        delta: s.take_or("delta", 0.1)?,
        alpha,
        c: s.take_or("c", 1.0)?,
    };
    s.finish(Mode::Bounds)?;
    let rw_mixing = bound_rw_mixing(&input)?;
    let rw_mixing_quarter = bound_rw_mixing(&BoundsInput { eps: 0.25, ..input })?;
    let report = BoundsReport {
        n,
        d,
        spectral_gap: lambda,
        mean_period: alpha,
        rw_mixing,
        rw_mixing_quarter,
        ip_mixing: bound_ip_mixing(&input, rw_mixing_quarter)?,
        sample_convergence: bound_sample_convergence(&input)?,
    };
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}
