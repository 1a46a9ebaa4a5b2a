use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use peerswap_cli::{execute, CliError, Mode, Settings};

#[derive(Parser)]
#[command(
    name = "peerswap",
    version,
    about = "Simulate and measure swap-based peer sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random regular topology.
    GenTopology(Keys),
    /// Repeated runs of the zero-delay protocol.
    RunIdeal(Keys),
    /// Repeated runs of the lock-based protocol under message delays.
    RunLocked(Keys),
    /// Compare ideal runs with the interchange process on random graphs.
    EquivalenceCheck(Keys),
    /// Recompute the histogram and KS test from a runs file.
    Analyze(Keys),
    /// Evaluate the mixing and convergence bounds.
    Bounds(Keys),
}

/// Every flag may also be given as `key = value` in the config file.
/// Flags win over the file.
#[derive(Args)]
struct Keys {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    d: Option<String>,
    /// Topology file to use instead of generating one.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    topology_seed: Option<String>,
    /// Per-edge clock rate.
    #[arg(long)]
    rate: Option<String>,
    /// Mean time between rings of one edge clock (1/rate).
    #[arg(long)]
    mean_period: Option<String>,
    /// Expected rings per second over the whole network.
    #[arg(long)]
    activation_rate: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// `auto` or a positive count.
    #[arg(long)]
    repetitions: Option<String>,
    /// zero, uniform or trace.
    #[arg(long)]
    delay: Option<String>,
    #[arg(long)]
    delay_max_ms: Option<String>,
    /// CSV matrix of per-pair delays in milliseconds.
    #[arg(long)]
    trace: Option<String>,
    #[arg(long)]
    quiesce_every: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    observed_peer: Option<String>,
    /// neighborhood or per-peer.
    #[arg(long)]
    sample_mode: Option<String>,
    /// Output directory (a file path for gen-topology).
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    target_gap: Option<String>,
    #[arg(long)]
    gap_tolerance: Option<String>,
    #[arg(long)]
    steer_steps: Option<String>,
    #[arg(long)]
    n_max: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    /// runs.csv to analyze.
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    c: Option<String>,
}

impl Keys {
    fn into_settings(self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::new(),
        };
        let flags = [
            ("n", self.n),
            ("d", self.d),
            ("topology", self.topology),
            ("topology-seed", self.topology_seed),
            ("rate", self.rate),
            ("mean-period", self.mean_period),
            ("activation-rate", self.activation_rate),
            ("horizon", self.horizon),
            ("repetitions", self.repetitions),
            ("delay", self.delay),
            ("delay-max-ms", self.delay_max_ms),
            ("trace", self.trace),
            ("quiesce-every", self.quiesce_every),
            ("seed", self.seed),
            ("workers", self.workers),
            ("observed-peer", self.observed_peer),
            ("sample-mode", self.sample_mode),
            ("out", self.out),
            ("target-gap", self.target_gap),
            ("gap-tolerance", self.gap_tolerance),
            ("steer-steps", self.steer_steps),
            ("n-max", self.n_max),
            ("seeds", self.seeds),
            ("runs", self.runs),
            ("lambda", self.lambda),
            ("eps", self.eps),
            ("delta", self.delta),
            ("c", self.c),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v);
            }
        }
        Ok(s)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, keys) = match cli.command {
        Command::GenTopology(k) => (Mode::GenTopology, k),
        Command::RunIdeal(k) => (Mode::RunIdeal, k),
        Command::RunLocked(k) => (Mode::RunLocked, k),
        Command::EquivalenceCheck(k) => (Mode::EquivalenceCheck, k),
        Command::Analyze(k) => (Mode::Analyze, k),
        Command::Bounds(k) => (Mode::Bounds, k),
    };
    match keys.into_settings().and_then(|s| execute(mode, s)) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("peerswap {mode}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
