use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use peerswap_core::analysis::SampleMode;
use peerswap_core::netsim::DelayModel;
use peerswap_core::{NodeId, Topology};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] peerswap_core::Error),
}

impl CliError {
    /// 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use peerswap_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::InvalidParameters(_) | E::Unbounded(_) | E::TooLarge { .. }) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    GenTopology,
    RunIdeal,
    RunLocked,
    EquivalenceCheck,
    Analyze,
    Bounds,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::GenTopology,
        Mode::RunIdeal,
        Mode::RunLocked,
        Mode::EquivalenceCheck,
        Mode::Analyze,
        Mode::Bounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::GenTopology => "gen-topology",
            Mode::RunIdeal => "run-ideal",
            Mode::RunLocked => "run-locked",
            Mode::EquivalenceCheck => "equivalence-check",
            Mode::Analyze => "analyze",
            Mode::Bounds => "bounds",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown mode `{s}`")))
    }
}

/// Flat `key = value` settings. Keys are normalized to kebab-case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut s = Settings::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return usage(format!("config line {}: expected `key = value`", i + 1));
            };
            let key = normalize(key);
            if key.is_empty() {
                return usage(format!("config line {}: empty key", i + 1));
            }
            if s.values
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return usage(format!("config line {}: duplicate key `{key}`", i + 1));
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets a key, replacing any file value.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("invalid value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        self.take(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required key `{key}`")))
    }

    /// Fails on any key the mode did not consume.
    pub fn finish(self, mode: Mode) -> CliResult<()> {
        if self.values.is_empty() {
            return Ok(());
        }
        let keys: Vec<_> = self.values.into_keys().collect();
        usage(format!("{mode} does not accept: {}", keys.join(", ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Neighborhood,
    PerPeer,
}

impl Sampling {
    pub fn core(self) -> SampleMode {
        match self {
            Sampling::Neighborhood => SampleMode::Neighborhood,
            Sampling::PerPeer => SampleMode::PerPeer,
        }
    }
}

impl FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "neighborhood" => Ok(Sampling::Neighborhood),
            "per-peer" => Ok(Sampling::PerPeer),
            _ => Err("expected `neighborhood` or `per-peer`".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Repetitions {
    Auto,
    Count(u64),
}

impl FromStr for Repetitions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Repetitions::Auto);
        }
        match s.parse::<u64>() {
            Ok(0) => Err("repetitions must be at least 1".into()),
            Ok(k) => Ok(Repetitions::Count(k)),
            Err(_) => Err("expected `auto` or a positive integer".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologySource {
    Generated { n: usize, d: usize, seed: u64 },
    File(PathBuf),
}

impl TopologySource {
    /// `topology = path`, or `n`, `d` and `topology-seed` (default `seed`).
    fn resolve(s: &mut Settings, master_seed: u64) -> CliResult<Self> {
        let n: Option<usize> = s.take("n")?;
        let d: Option<usize> = s.take("d")?;
        let seed = s.take_or("topology-seed", master_seed)?;
        match s.take_str("topology") {
            Some(path) => {
                if n.is_some() || d.is_some() {
                    return usage("give either `topology` or `n` and `d`, not both");
                }
                Ok(TopologySource::File(path.into()))
            }
            None => match (n, d) {
                (Some(n), Some(d)) => Ok(TopologySource::Generated { n, d, seed }),
                _ => usage("need `topology` or both `n` and `d`"),
            },
        }
    }

    pub fn load(&self) -> CliResult<Topology> {
        Ok(match self {
            TopologySource::Generated { n, d, seed } => Topology::generate_regular(*n, *d, *seed)?,
            TopologySource::File(path) => Topology::read_file(path)?,
        })
    }
}

/// Exactly one way of giving the clock speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockSpeed {
    Rate(f64),
    MeanPeriod(f64),
    /// Network-wide rings per second; divided by `|E|`.
    Activation(f64),
}

impl ClockSpeed {
    pub fn resolve(s: &mut Settings) -> CliResult<Self> {
        let given = [
            s.take::<f64>("rate")?.map(ClockSpeed::Rate),
            s.take::<f64>("mean-period")?.map(ClockSpeed::MeanPeriod),
            s.take::<f64>("activation-rate")?
                .map(ClockSpeed::Activation),
        ];
        let mut given = given.into_iter().flatten();
        let speed = given.next().unwrap_or(ClockSpeed::Rate(1.0));
        if given.next().is_some() {
            return usage("give only one of `rate`, `mean-period`, `activation-rate`");
        }
        let v = match speed {
            ClockSpeed::Rate(v) | ClockSpeed::MeanPeriod(v) | ClockSpeed::Activation(v) => v,
        };
        if !(v > 0.0 && v.is_finite()) {
            return usage(format!("clock speed must be positive, got {v}"));
        }
        Ok(speed)
    }

    /// Per-edge exponential rate.
    pub fn per_edge(self, edge_count: usize) -> f64 {
        match self {
            ClockSpeed::Rate(r) => r,
            ClockSpeed::MeanPeriod(p) => 1.0 / p,
            ClockSpeed::Activation(r) => r / edge_count as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelaySetting {
    Zero,
    Uniform { max_ms: f64 },
    Trace(PathBuf),
}

impl DelaySetting {
    fn resolve(s: &mut Settings) -> CliResult<Self> {
        let kind = s.take_str("delay").unwrap_or_else(|| "zero".into());
        let max: Option<f64> = s.take("delay-max-ms")?;
        let trace = s.take_str("trace");
        match (kind.as_str(), max, trace) {
            ("zero", None, None) => Ok(DelaySetting::Zero),
            ("uniform", max, None) => {
                let max_ms = max.unwrap_or(100.0);
                if !(max_ms >= 0.0 && max_ms.is_finite()) {
                    return usage("`delay-max-ms` must be a nonnegative number");
                }
                Ok(DelaySetting::Uniform { max_ms })
            }
            ("trace", None, Some(path)) => Ok(DelaySetting::Trace(path.into())),
            ("trace", None, None) => usage("`delay = trace` needs `trace = <path>`"),
            ("zero" | "uniform" | "trace", _, _) => {
                usage(format!("conflicting delay keys for `delay = {kind}`"))
            }
            _ => usage(format!("unknown delay model `{kind}`")),
        }
    }

    pub fn load(&self) -> CliResult<DelayModel> {
        Ok(match self {
            DelaySetting::Zero => DelayModel::Zero,
            DelaySetting::Uniform { max_ms } => DelayModel::uniform_ms(*max_ms)?,
            DelaySetting::Trace(path) => DelayModel::read_trace(path)?,
        })
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Settings of a `run-ideal` or `run-locked` experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub topology: TopologySource,
    pub rate: ClockSpeed,
    pub horizon: f64,
    pub repetitions: Repetitions,
    pub delay: DelaySetting,
    /// Locked mode only.
    pub quiesce_every: Option<f64>,
    pub master_seed: u64,
    /// Affects scheduling only.
    #[serde(skip)]
    pub workers: usize,
    pub observed_peer: NodeId,
    pub sample_mode: Sampling,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn resolve(mode: Mode, mut s: Settings) -> CliResult<Self> {
        if !matches!(mode, Mode::RunIdeal | Mode::RunLocked) {
            return usage(format!("{mode} is not an experiment mode"));
        }
        let master_seed = s.take_or("seed", 0u64)?;
        let topology = TopologySource::resolve(&mut s, master_seed)?;
        let rate = ClockSpeed::resolve(&mut s)?;
        let horizon: f64 = s.require("horizon")?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return usage("`horizon` must be a nonnegative number");
        }
        let repetitions = s.take_or("repetitions", Repetitions::Auto)?;
        let (delay, quiesce_every) = if mode == Mode::RunLocked {
            let q: Option<f64> = s.take("quiesce-every")?;
            if q.is_some_and(|q| !(q > 0.0)) {
                return usage("`quiesce-every` must be positive");
            }
            (DelaySetting::resolve(&mut s)?, q)
        } else {
            (DelaySetting::Zero, None)
        };
        let workers = s.take_or("workers", default_workers())?;
        if workers == 0 {
            return usage("`workers` must be at least 1");
        }
        let cfg = ExperimentConfig {
            mode,
            topology,
            rate,
            horizon,
            repetitions,
            delay,
            quiesce_every,
            master_seed,
            workers,
            observed_peer: s.take_or("observed-peer", 0)?,
            sample_mode: s.take_or("sample-mode", Sampling::Neighborhood)?,
            out_dir: s.take_str("out").map(PathBuf::from),
        };
        s.finish(mode)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let s = Settings::parse("# header\nn = 16\n\nd=3  # degree\nmean_period = 2\n").unwrap();
        let mut s2 = Settings::new();
        s2.set("n", "16");
        s2.set("d", "3");
        s2.set("mean-period", "2");
        assert_eq!(s, s2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(Settings::parse("n 16"), Err(CliError::Usage(_))));
        assert!(matches!(Settings::parse("= 3"), Err(CliError::Usage(_))));
        assert!(matches!(
            Settings::parse("n = 1\nn = 2"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn flags_override_file_values() {
        let mut s = Settings::parse("n = 16\nd = 3\nhorizon = 6").unwrap();
        s.set("horizon", "2");
        let cfg = ExperimentConfig::resolve(Mode::RunIdeal, s).unwrap();
        assert_eq!(cfg.horizon, 2.0);
    }

    #[test]
    fn repetitions_zero_is_a_usage_error() {
        let s = Settings::parse("n = 16\nd = 3\nhorizon = 6\nrepetitions = 0").unwrap();
        let err = ExperimentConfig::resolve(Mode::RunIdeal, s).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!("auto".parse::<Repetitions>(), Ok(Repetitions::Auto));
        assert_eq!("7".parse::<Repetitions>(), Ok(Repetitions::Count(7)));
    }

    #[test]
    fn rate_aliases_are_reciprocal() {
        let mut s = Settings::parse("mean-period = 4").unwrap();
        let period = ClockSpeed::resolve(&mut s).unwrap();
        assert_eq!(period.per_edge(10), 0.25);
        assert_eq!(ClockSpeed::Activation(50.0).per_edge(128), 50.0 / 128.0);
        let mut both = Settings::parse("rate = 1\nmean-period = 1").unwrap();
        assert!(ClockSpeed::resolve(&mut both).is_err());
        let mut negative = Settings::parse("rate = -1").unwrap();
        assert!(ClockSpeed::resolve(&mut negative).is_err());
    }

    #[test]
    fn unused_keys_are_rejected() {
        let s = Settings::parse("n = 16\nd = 3\nhorizon = 6\ndelay = uniform").unwrap();
        assert!(matches!(
            ExperimentConfig::resolve(Mode::RunIdeal, s),
            Err(CliError::Usage(_))
        ));
        let s = Settings::parse("n = 16\nd = 3\nhorizon = 6\ndelay = uniform").unwrap();
        let cfg = ExperimentConfig::resolve(Mode::RunLocked, s).unwrap();
        assert_eq!(cfg.delay, DelaySetting::Uniform { max_ms: 100.0 });
    }

    #[test]
    fn topology_sources_are_exclusive() {
        let s = Settings::parse("topology = g.txt\nn = 4\nhorizon = 1").unwrap();
        assert!(ExperimentConfig::resolve(Mode::RunIdeal, s).is_err());
        let s = Settings::parse("topology = g.txt\nhorizon = 1\nseed = 5").unwrap();
        let cfg = ExperimentConfig::resolve(Mode::RunIdeal, s).unwrap();
        assert_eq!(cfg.topology, TopologySource::File("g.txt".into()));
        let s = Settings::parse("n = 8\nd = 3\nhorizon = 1\nseed = 5").unwrap();
        let cfg = ExperimentConfig::resolve(Mode::RunIdeal, s).unwrap();
        assert_eq!(
            cfg.topology,
            TopologySource::Generated {
                n: 8,
                d: 3,
                seed: 5
            }
        );
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
