//! Frequencies, goodness-of-fit statistics and closed-form bound calculators.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::rng::{PrngState, Stream};
use crate::topology::NodeId;

/// Canonical outcome: a sorted set of peer ids (a single id in per-peer mode).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutcomeKey(Vec<NodeId>);

impl OutcomeKey {
    /// Sorted key; sample order is discarded.
    pub fn neighborhood(mut ids: Vec<NodeId>) -> Self {
        ids.sort_unstable();
        Self(ids)
    }

    pub fn peer(id: NodeId) -> Self {
        Self(vec![id])
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.0
    }
}

impl fmt::Display for OutcomeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, id) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

impl FromStr for OutcomeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ids = s
            .split(';')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameters(format!("bad outcome key {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::neighborhood(ids))
    }
}

/// Observation counts per outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    counts: BTreeMap<OutcomeKey, u64>,
    total: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: OutcomeKey) {
        self.add_count(key, 1);
    }

    pub fn add_count(&mut self, key: OutcomeKey, count: u64) {
        if count > 0 {
            *self.counts.entry(key).or_default() += count;
            self.total += count;
        }
    }

    pub fn get(&self, key: &OutcomeKey) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OutcomeKey, u64)> {
        self.counts.iter().map(|(k, &c)| (k, c))
    }

    /// Counts in key order.
    pub fn counts(&self) -> Vec<u64> {
        self.counts.values().copied().collect()
    }

    /// `key,count` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,count\n");
        for (k, c) in &self.counts {
            writeln!(out, "{k},{c}").expect("String write");
        }
        out
    }
}

/// Exact multiset count of `observations`.
pub fn frequency_counts<I>(observations: I) -> Result<Histogram>
where
    I: IntoIterator<Item = OutcomeKey>,
{
    let mut h = Histogram::new();
    for key in observations {
        h.add(key);
    }
    if h.total == 0 {
        return invalid("no observations");
    }
    Ok(h)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub distance: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}`.
///
/// Summed for at most 100 terms; returns 1 when the series has not settled,
/// which only happens for small `λ` where `Q` is 1 to double precision.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    const EPS_TERM: f64 = 1e-3;
    const EPS_SUM: f64 = 1e-8;
    let a2 = -2.0 * lambda * lambda;
    let mut sign = 2.0;
    let mut sum = 0.0;
    let mut previous = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (a2 * kf * kf).exp();
        sum += term;
        if term.abs() <= EPS_TERM * previous || term.abs() <= EPS_SUM * sum {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        previous = term.abs();
    }
    1.0
}

/// KS distance between the empirical CDFs of two samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return invalid("KS test needs two nonempty samples");
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (m, k) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut distance: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        distance = distance.max((i as f64 / m - j as f64 / k).abs());
    }
    let ne = m * k / (m + k);
    Ok(KsResult {
        distance,
        p_value: kolmogorov_q(ne.sqrt() * distance),
    })
}

/// Compares observed counts against counts from `total` uniform draws over
/// `domain_size` outcomes. Unobserved outcomes enter as zero counts.
///
/// The synthetic draws use the stream `derive_seed(synth_seed, Synthetic, 0)`.
pub fn ks_uniform_test(h: &Histogram, domain_size: usize, synth_seed: u64) -> Result<KsResult> {
    if domain_size < h.distinct() || domain_size == 0 {
        return invalid(format!(
            "domain size {domain_size} is smaller than the {} observed outcomes",
            h.distinct()
        ));
    }
    let mut rng = PrngState::derived(synth_seed, Stream::Synthetic, 0);
    let mut synthetic = vec![0u64; domain_size];
    for _ in 0..h.total() {
        synthetic[rng.below(domain_size)] += 1;
    }
    let synthetic: Vec<f64> = synthetic.into_iter().map(|c| c as f64).collect();
    ks_against(h, domain_size, &synthetic)
}

/// KS test of observed counts (zero-padded to `domain_size`) against a given count vector.
pub fn ks_against(h: &Histogram, domain_size: usize, reference: &[f64]) -> Result<KsResult> {
    if domain_size < h.distinct() {
        return invalid("domain size is smaller than the number of observed outcomes");
    }
    let mut observed: Vec<f64> = h.counts().into_iter().map(|c| c as f64).collect();
    observed.resize(domain_size, 0.0);
    ks_two_sample(&observed, reference)
}

/// `½ Σ |μ_s − ν_s|`.
pub fn tv_distance(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return invalid(format!("length mismatch: {} vs {}", mu.len(), nu.len()));
    }
    Ok(0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Sorted support with cumulative fractions.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return invalid("ECDF of an empty sample");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, v) in sorted.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    Ok(out)
}

/// What one run contributes to the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// The observed peer's whole neighborhood, as one set-valued outcome.
    Neighborhood,
    /// Each member of the observed peer's neighborhood, counted individually.
    PerPeer,
}

/// Runs needed for about 100 observations per outcome.
pub fn repetitions_needed(n: usize, d: usize, mode: SampleMode) -> Result<u128> {
    if d == 0 || d >= n {
        return invalid(format!("need 0 < d < n, got n = {n}, d = {d}"));
    }
    let outcomes = match mode {
        SampleMode::Neighborhood => binomial(n as u128 - 1, d as u128)?,
        SampleMode::PerPeer => n as u128 - 1,
    };
    let scaled = outcomes
        .checked_mul(100)
        .ok_or_else(|| Error::InvalidParameters("repetition count overflows".into()))?;
    Ok(scaled.div_ceil(d as u128))
}

/// Size of the outcome domain for the observed peer.
pub fn outcome_domain(n: usize, d: usize, mode: SampleMode) -> Result<u128> {
    match mode {
        SampleMode::Neighborhood => binomial(n as u128 - 1, d as u128),
        SampleMode::PerPeer => Ok(n as u128 - 1),
    }
}

fn binomial(n: u128, k: u128) -> Result<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| Error::InvalidParameters("binomial coefficient overflows".into()))?
            / (i + 1);
    }
    Ok(acc)
}

/// Inputs to the bound calculators. `alpha` is the mean clock period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsInput {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub c: f64,
}

impl BoundsInput {
    fn check_gap(&self) -> Result<()> {
        if self.lambda == 0.0 {
            return Err(Error::Unbounded("spectral gap is zero".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return invalid(format!("spectral gap {} outside (0, 1]", self.lambda));
        }
        if self.n < 2 || self.d == 0 {
            return invalid("need n ≥ 2 and d ≥ 1");
        }
        if !(self.alpha > 0.0) {
            return invalid("mean period must be positive");
        }
        Ok(())
    }
}

/// Random-walk mixing bound `α · ln(n/ε) / (d·λ)`.
pub fn bound_rw_mixing(b: &BoundsInput) -> Result<f64> {
    b.check_gap()?;
    if !(b.eps > 0.0) {
        return invalid("ε must be positive");
    }
    let log = (b.n as f64 / b.eps).ln();
    if log <= 0.0 {
        return invalid(format!("ln(n/ε) = {log} is not positive"));
    }
    Ok(b.alpha * log / (b.d as f64 * b.lambda))
}

/// Interchange-process mixing bound `C · ln(n/ε) · t_rw`.
pub fn bound_ip_mixing(b: &BoundsInput, t_rw_quarter: f64) -> Result<f64> {
    if !(b.eps > 0.0 && b.eps < 0.5) {
        return invalid(format!("ε = {} outside (0, 1/2)", b.eps));
    }
    if b.n < 1 {
        return invalid("n must be positive");
    }
    Ok(b.c * (b.n as f64 / b.eps).ln() * t_rw_quarter)
}

/// Sample-convergence bound `α · C · ln(2n^{d+1}/δ) · ln(4n) / (d·λ)`.
pub fn bound_sample_convergence(b: &BoundsInput) -> Result<f64> {
    b.check_gap()?;
    if !(b.delta > 0.0 && b.delta < 1.0) {
        return invalid(format!("δ = {} outside (0, 1)", b.delta));
    }
    let n = b.n as f64;
    let log_term = 2f64.ln() + (b.d as f64 + 1.0) * n.ln() - b.delta.ln();
    Ok(b.alpha * b.c * log_term * (4.0 * n).ln() / (b.d as f64 * b.lambda))
}
