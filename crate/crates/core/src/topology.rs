//! The fixed initial communication graph and its spectral analysis.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::eigen::SymmetricMatrix;
use crate::error::{invalid, Error, Result};
use crate::rng::{PrngState, Stream};

/// Node (and peer) identifier.
pub type NodeId = usize;
/// Index of an edge slot in [`Topology::edges`].
pub type Slot = usize;

const MAX_PAIRING_ATTEMPTS: usize = 1_000_000;

/// Bijection on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<NodeId>,
}

impl Permutation {
    pub fn new(mapping: Vec<NodeId>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &v in &mapping {
            if v >= n || seen[v] {
                return invalid(format!("mapping is not a bijection on 0..{n}"));
            }
            seen[v] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn transposition(n: usize, a: NodeId, b: NodeId) -> Self {
        let mut p = Self::identity(n);
        p.mapping.swap(a, b);
        p
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, v: NodeId) -> NodeId {
        self.mapping[v]
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &v) in self.mapping.iter().enumerate() {
            inv[v] = i;
        }
        Self { mapping: inv }
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            mapping: other.mapping.iter().map(|&v| self.mapping[v]).collect(),
        }
    }

    /// Swaps the images of `a` and `b`.
    pub(crate) fn swap_images(&mut self, a: NodeId, b: NodeId) {
        self.mapping.swap(a, b);
    }

    pub fn random(n: usize, rng: &mut PrngState) -> Self {
        let mut mapping: Vec<NodeId> = (0..n).collect();
        rng.partial_shuffle(&mut mapping, n);
        Self { mapping }
    }
}

fn canonical(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected simple connected graph with indexed edge slots.
#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    degree: Option<usize>,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
    slots: HashMap<(NodeId, NodeId), Slot>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }
}

impl Eq for Topology {}

impl Topology {
    /// Builds a simple connected graph. Edge slot `k` is `edges[k]`.
    ///
    /// Regularity is not required here; see [`Topology::regular`].
    pub fn new(n: usize, edges: Vec<(NodeId, NodeId)>) -> Result<Self> {
        if n < 2 {
            return invalid("a topology needs at least 2 nodes");
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut slots = HashMap::with_capacity(edges.len());
        let mut stored = Vec::with_capacity(edges.len());
        for (slot, &(a, b)) in edges.iter().enumerate() {
            if a >= n || b >= n {
                return invalid(format!("edge ({a}, {b}) references a node outside 0..{n}"));
            }
            if a == b {
                return invalid(format!("self-loop at node {a}"));
            }
            let key = canonical(a, b);
            if slots.insert(key, slot).is_some() {
                return invalid(format!("duplicate edge ({a}, {b})"));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
            stored.push(key);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let first = adjacency[0].len();
        let degree = adjacency.iter().all(|l| l.len() == first).then_some(first);
        let topology = Self {
            n,
            degree,
            edges: stored,
            adjacency,
            slots,
        };
        if !topology.is_connected() {
            return invalid("graph is not connected");
        }
        Ok(topology)
    }

    /// Builds a connected `d`-regular graph, rejecting any other degree sequence.
    pub fn regular(n: usize, d: usize, edges: Vec<(NodeId, NodeId)>) -> Result<Self> {
        let t = Self::new(n, edges)?;
        if t.degree != Some(d) {
            return invalid(format!("graph is not {d}-regular"));
        }
        Ok(t)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .collect();
        Self::new(n, edges)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return invalid("a cycle needs at least 3 nodes");
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)).collect())
    }

    /// Uniform random connected `d`-regular graph via the pairing model.
    ///
    /// Pairings with self-loops, parallel edges or more than one component
    /// are discarded and the pairing restarts from scratch.
    pub fn generate_regular(n: usize, d: usize, seed: u64) -> Result<Self> {
        check_regular_params(n, d)?;
        let mut rng = PrngState::derived(seed, Stream::Topology, 0);
        if d == 2 {
            // A connected 2-regular graph is a Hamiltonian cycle; a uniform
            // node ordering gives a uniform one directly.
            let mut order: Vec<NodeId> = (0..n).collect();
            rng.partial_shuffle(&mut order, n);
            let mut edges: Vec<_> = (0..n)
                .map(|i| canonical(order[i], order[(i + 1) % n]))
                .collect();
            edges.sort_unstable();
            return Self::regular(n, d, edges);
        }
        let mut points: Vec<NodeId> = (0..n).flat_map(|v| std::iter::repeat(v).take(d)).collect();
        let mut seen = HashSet::with_capacity(n * d / 2);
        for _ in 0..MAX_PAIRING_ATTEMPTS {
            let len = points.len();
            rng.partial_shuffle(&mut points, len);
            seen.clear();
            let mut edges = Vec::with_capacity(n * d / 2);
            let simple = points.chunks_exact(2).all(|pair| {
                let (a, b) = (pair[0], pair[1]);
                let key = canonical(a, b);
                let ok = a != b && seen.insert(key);
                edges.push(key);
                ok
            });
            if !simple {
                continue;
            }
            edges.sort_unstable();
            match Self::regular(n, d, edges) {
                Ok(t) => return Ok(t),
                Err(Error::InvalidParameters(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        invalid(format!(
            "no connected simple {d}-regular graph on {n} nodes after {MAX_PAIRING_ATTEMPTS} pairings"
        ))
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn regular_degree(&self) -> Option<usize> {
        self.degree
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge(&self, slot: Slot) -> (NodeId, NodeId) {
        self.edges[slot]
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn slot_of(&self, a: NodeId, b: NodeId) -> Option<Slot> {
        self.slots.get(&canonical(a, b)).copied()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    /// `W = D^{-1/2} A D^{-1/2}`.
    pub fn normalized_adjacency(&self) -> SymmetricMatrix {
        let mut w = SymmetricMatrix::zeros(self.n);
        for &(a, b) in &self.edges {
            let v = 1.0 / ((self.degree(a) * self.degree(b)) as f64).sqrt();
            w.set(a, b, v);
        }
        w
    }

    /// `1 - max(|λ₂(W)|, |λₙ(W)|)` from the full eigendecomposition of `W`.
    pub fn spectral_gap(&self) -> f64 {
        gap_from_eigenvalues(&self.normalized_adjacency().eigenvalues())
    }

    /// Canonical edge set.
    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges.iter().copied().collect()
    }

    /// `{ {p(i), p(j)} : {i, j} ∈ E }` as a canonical sorted set.
    pub fn permuted_edge_set(&self, p: &Permutation) -> BTreeSet<(NodeId, NodeId)> {
        self.edges
            .iter()
            .map(|&(a, b)| canonical(p.apply(a), p.apply(b)))
            .collect()
    }

    /// Copy with every node `v` renamed to `p(v)`; slot order is kept.
    pub fn relabeled(&self, p: &Permutation) -> Result<Self> {
        if p.len() != self.n {
            return invalid("permutation size differs from node count");
        }
        Self::new(
            self.n,
            self.edges
                .iter()
                .map(|&(a, b)| (p.apply(a), p.apply(b)))
                .collect(),
        )
    }

    /// Text form: `n d` then one `i j` line per slot.
    pub fn to_text(&self) -> Result<String> {
        let d = self.degree.ok_or_else(|| {
            Error::InvalidParameters("only regular topologies can be written".into())
        })?;
        let mut out = format!("{} {}\n", self.n, d);
        for &(a, b) in &self.edges {
            writeln!(out, "{a} {b}").expect("writing to a String cannot fail");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (line_no, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty topology file".into(),
        })?;
        let [n, d] = parse_pair(header, line_no + 1)?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let [a, b] = parse_pair(line, idx + 1)?;
            edges.push((a, b));
        }
        check_regular_params(n, d)?;
        if edges.len() != n * d / 2 {
            return invalid(format!(
                "expected {} edges for n={n}, d={d}, found {}",
                n * d / 2,
                edges.len()
            ));
        }
        Self::regular(n, d, edges)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

fn parse_pair(line: &str, line_no: usize) -> Result<[usize; 2]> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected two integers, found {:?}", line.trim()),
        });
    }
    let mut out = [0; 2];
    for (slot, f) in out.iter_mut().zip(&fields) {
        *slot = f.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("not a non-negative integer: {f:?}"),
        })?;
    }
    Ok(out)
}

pub(crate) fn check_regular_params(n: usize, d: usize) -> Result<()> {
    if n < 2 {
        return invalid("n must be at least 2");
    }
    if d == 0 {
        return invalid("d must be positive");
    }
    if d >= n {
        return invalid(format!("d = {d} must be smaller than n = {n}"));
    }
    if (n * d) % 2 != 0 {
        return invalid(format!("n·d = {} is odd", n * d));
    }
    if d == 1 && n != 2 {
        return invalid("a connected 1-regular graph has exactly 2 nodes");
    }
    Ok(())
}

fn gap_from_eigenvalues(values: &[f64]) -> f64 {
    match values.len() {
        0 | 1 => 1.0,
        len => 1.0 - values[1].abs().max(values[len - 1].abs()),
    }
}

/// Generates `sample_count` random regular topologies and returns each with
/// its spectral gap, sorted ascending by gap.
///
/// Sample `k` uses the seed `derive_seed(seed, Topology, k)`.
pub fn search_by_gap(
    n: usize,
    d: usize,
    sample_count: usize,
    seed: u64,
) -> Result<Vec<(Topology, f64)>> {
    check_regular_params(n, d)?;
    if sample_count == 0 {
        return invalid("sample_count must be at least 1");
    }
    let mut found = (0..sample_count as u64)
        .into_par_iter()
        .map(|k| {
            let t = Topology::generate_regular(
                n,
                d,
                crate::rng::derive_seed(seed, Stream::Topology, k),
            )?;
            let gap = t.spectral_gap();
            Ok((t, gap))
        })
        .collect::<Result<Vec<_>>>()?;
    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(found)
}

/// Moves a regular topology towards a target spectral gap by greedy
/// degree-preserving double-edge switches.
///
/// A switch replaces `{a,b}, {c,d}` with `{a,c}, {b,d}` (or `{a,d}, {b,c}`)
/// and is kept only when the result is simple, connected and strictly closer
/// to `target`. Stops once within `tolerance` or after `max_steps` proposals.
pub fn steer_gap(
    start: &Topology,
    target: f64,
    tolerance: f64,
    seed: u64,
    max_steps: usize,
) -> Result<(Topology, f64)> {
    let d = start
        .regular_degree()
        .ok_or_else(|| Error::InvalidParameters("gap steering needs a regular topology".into()))?;
    let n = start.node_count();
    let mut rng = PrngState::derived(seed, Stream::Topology, u64::MAX);
    let mut edges = start.edges().to_vec();
    let mut present: HashSet<(NodeId, NodeId)> = edges.iter().copied().collect();
    let mut best = start.clone();
    let mut best_gap = start.spectral_gap();
    if edges.len() < 2 {
        return Ok((best, best_gap));
    }
    for _ in 0..max_steps {
        if (best_gap - target).abs() <= tolerance {
            break;
        }
        let i = rng.below(edges.len());
        let j = rng.below(edges.len());
        let ((a, b), (c, e)) = (edges[i], edges[j]);
        if i == j || a == c || a == e || b == c || b == e {
            continue;
        }
        let (x, y) = if rng.below(2) == 0 {
            (canonical(a, c), canonical(b, e))
        } else {
            (canonical(a, e), canonical(b, c))
        };
        if present.contains(&x) || present.contains(&y) {
            continue;
        }
        let mut candidate = edges.clone();
        candidate[i] = x;
        candidate[j] = y;
        let Ok(t) = Topology::regular(n, d, candidate.clone()) else {
            continue;
        };
        let gap = t.spectral_gap();
        if (gap - target).abs() < (best_gap - target).abs() {
            present.remove(&edges[i]);
            present.remove(&edges[j]);
            present.insert(x);
            present.insert(y);
            edges = candidate;
            best = t;
            best_gap = gap;
        }
    }
    let mut sorted = best.edges().to_vec();
    sorted.sort_unstable();
    let best = Topology::regular(n, d, sorted)?;
    Ok((best, best_gap))
}
