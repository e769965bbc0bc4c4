//! Input graph families: random regular graphs, Paley graphs, and small
//! fixtures with known structure.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::Crown;
use crate::graph::Graph;
use crate::rng::{SeedSource, Stream};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("n·d = {n}·{d} is odd, no {d}-regular graph on {n} vertices exists")]
    Parity { n: usize, d: usize },
    #[error("degree must satisfy 0 < d < n (got n = {n}, d = {d})")]
    Degree { n: usize, d: usize },
    #[error("no simple pairing found after {0} restarts")]
    RestartsExhausted(usize),
    #[error("Paley order must be a prime ≡ 1 (mod 4), got {0}")]
    PaleyOrder(u64),
    #[error("crown fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GenSpec {
    RandomRegular { n: usize, d: usize, seed: u64 },
    Paley { q: u64 },
    Fixture { cycle_len: usize, spikes: Vec<usize> },
}

pub const MAX_RESTARTS: usize = 10_000;
const RESTART_MAX_DEGREE: usize = 4;

/// Edge-membership structure for the repair loop. Dense bitset for small
/// `n`, hashed otherwise.
enum EdgeSet {
    Dense { n: usize, bits: Vec<u64> },
    Hashed(HashSet<u64>),
}

impl EdgeSet {
    fn new(n: usize, expected_edges: usize) -> Self {
        if n <= 32_768 {
            Self::Dense {
                n,
                bits: vec![0; (n * n).div_ceil(64)],
            }
        } else {
            Self::Hashed(HashSet::with_capacity(expected_edges))
        }
    }

    fn key(n: usize, u: u32, v: u32) -> usize {
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        a as usize * n + b as usize
    }

    fn contains(&self, u: u32, v: u32) -> bool {
        match self {
            Self::Dense { n, bits } => {
                let k = Self::key(*n, u, v);
                bits[k >> 6] >> (k & 63) & 1 == 1
            }
            Self::Hashed(set) => set.contains(&Self::hkey(u, v)),
        }
    }

    fn hkey(u: u32, v: u32) -> u64 {
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        (a as u64) << 32 | b as u64
    }

    fn insert(&mut self, u: u32, v: u32) {
        match self {
            Self::Dense { n, bits } => {
                let k = Self::key(*n, u, v);
                bits[k >> 6] |= 1 << (k & 63);
            }
            Self::Hashed(set) => {
                set.insert(Self::hkey(u, v));
            }
        }
    }

    fn remove(&mut self, u: u32, v: u32) {
        match self {
            Self::Dense { n, bits } => {
                let k = Self::key(*n, u, v);
                bits[k >> 6] &= !(1 << (k & 63));
            }
            Self::Hashed(set) => {
                set.remove(&Self::hkey(u, v));
            }
        }
    }
}

/// Uniformly paired stubs (configuration model).
fn pairing<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<u32> {
    let mut stubs: Vec<u32> = (0..n as u32).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    stubs.shuffle(rng);
    stubs
}

/// Simple `d`-regular graph on `n` vertices.
///
/// For `d <= 4` the configuration model is restarted until the pairing is
/// simple (a pairing is simple with probability about `exp((1 - d²)/4)`).
/// Larger degrees keep the simple pairs and repair each loop or
/// repeated pair with a degree-preserving switch against a random accepted
/// edge, restarting only if a repair stalls.
pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<Graph, GenError> {
    if d == 0 || d >= n {
        return Err(GenError::Degree { n, d });
    }
    if n * d % 2 == 1 {
        return Err(GenError::Parity { n, d });
    }
    let source = SeedSource::new(seed);
    let use_switchings = d > RESTART_MAX_DEGREE;
    for attempt in 0..MAX_RESTARTS {
        let mut rng = source.substream(Stream::Generate, attempt as u64);
        let stubs = pairing(n, d, &mut rng);
        let edges = if use_switchings {
            repair_by_switching(n, d, &stubs, &mut rng)
        } else {
            simple_or_none(n, d, &stubs)
        };
        if let Some(edges) = edges {
            let g = Graph::from_edges(n, &edges).expect("generator emits valid edges");
            debug_assert!(g.is_regular() && g.degree_min() == d);
            return Ok(g);
        }
    }
    Err(GenError::RestartsExhausted(MAX_RESTARTS))
}

fn simple_or_none(n: usize, d: usize, stubs: &[u32]) -> Option<Vec<(u32, u32)>> {
    let mut seen = EdgeSet::new(n, n * d / 2);
    let mut edges = Vec::with_capacity(stubs.len() / 2);
    for pair in stubs.chunks_exact(2) {
        let (u, v) = (pair[0], pair[1]);
        if u == v || seen.contains(u, v) {
            return None;
        }
        seen.insert(u, v);
        edges.push((u, v));
    }
    Some(edges)
}

fn repair_by_switching<R: Rng>(n: usize, d: usize, stubs: &[u32], rng: &mut R) -> Option<Vec<(u32, u32)>> {
    let mut present = EdgeSet::new(n, n * d / 2);
    let mut edges = Vec::with_capacity(stubs.len() / 2);
    let mut bad = Vec::new();
    for pair in stubs.chunks_exact(2) {
        let (u, v) = (pair[0], pair[1]);
        if u == v || present.contains(u, v) {
            bad.push((u, v));
        } else {
            present.insert(u, v);
            edges.push((u, v));
        }
    }
    let attempts_per_pair = 64 * n.max(16);
    for (u, v) in bad {
        let mut fixed = false;
        for _ in 0..attempts_per_pair {
            let k = rng.gen_range(0..edges.len());
            let (mut x, mut y) = edges[k];
            if rng.gen::<bool>() {
                std::mem::swap(&mut x, &mut y);
            }
            // Replace xy by ux and vy.
            if x == u || x == v || y == u || y == v {
                continue;
            }
            if present.contains(u, x) || present.contains(v, y) {
                continue;
            }
            present.remove(x, y);
            present.insert(u, x);
            present.insert(v, y);
            edges[k] = (u, x);
            edges.push((v, y));
            fixed = true;
            break;
        }
        if !fixed {
            return None;
        }
    }
    Some(edges)
}

fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    let mut f = 2;
    while f * f <= q {
        if q.is_multiple_of(f) {
            return false;
        }
        f += 1;
    }
    true
}

/// Paley graph on `Z_q`: `uv` is an edge iff `u - v` is a nonzero square.
pub fn paley(q: u64) -> Result<Graph, GenError> {
    if !is_prime(q) || q % 4 != 1 || q > u32::MAX as u64 {
        return Err(GenError::PaleyOrder(q));
    }
    let mut residue = vec![false; q as usize];
    for x in 1..q {
        residue[(x * x % q) as usize] = true;
    }
    let mut edges = Vec::new();
    for u in 0..q {
        for v in u + 1..q {
            if residue[((v - u) % q) as usize] {
                edges.push((u as u32, v as u32));
            }
        }
    }
    Ok(Graph::from_edges(q as usize, &edges).expect("valid Paley edges"))
}

pub fn complete(n: usize) -> Graph {
    let edges: Vec<(u32, u32)> = (0..n as u32)
        .flat_map(|u| (u + 1..n as u32).map(move |v| (u, v)))
        .collect();
    Graph::from_edges(n, &edges).unwrap()
}

pub fn cycle(n: usize) -> Graph {
    let edges: Vec<(u32, u32)> = (0..n as u32).map(|u| (u, (u + 1) % n as u32)).collect();
    Graph::from_edges(n, &edges).unwrap()
}

/// Outer 5-cycle `0..5`, inner pentagram `5..10`, spokes `i -- i+5`.
pub fn petersen() -> Graph {
    let mut edges = Vec::with_capacity(15);
    for i in 0..5u32 {
        edges.push((i, (i + 1) % 5));
        edges.push((i + 5, (i + 2) % 5 + 5));
        edges.push((i, i + 5));
    }
    Graph::from_edges(10, &edges).unwrap()
}

/// A graph that is exactly a crown: cycle `0..cycle_len` plus one pendant
/// vertex per spike position, numbered `cycle_len..` in position order.
pub fn crown_fixture(cycle_len: usize, spike_positions: &[usize]) -> Result<(Graph, Crown), GenError> {
    if cycle_len < 3 {
        return Err(GenError::Fixture(format!("cycle length {cycle_len} < 3")));
    }
    let mut seen = HashSet::new();
    for &p in spike_positions {
        if p >= cycle_len {
            return Err(GenError::Fixture(format!("spike position {p} not on the cycle")));
        }
        if !seen.insert(p) {
            return Err(GenError::Fixture(format!("duplicate spike position {p}")));
        }
    }
    let n = cycle_len + spike_positions.len();
    let cycle_vertices: Vec<u32> = (0..cycle_len as u32).collect();
    let mut edges: Vec<(u32, u32)> = (0..cycle_len as u32)
        .map(|u| (u, (u + 1) % cycle_len as u32))
        .collect();
    let spikes: Vec<(u32, u32)> = spike_positions
        .iter()
        .enumerate()
        .map(|(j, &p)| (p as u32, (cycle_len + j) as u32))
        .collect();
    edges.extend(&spikes);
    let g = Graph::from_edges(n, &edges).map_err(|e| GenError::Fixture(e.to_string()))?;
    Ok((
        g,
        Crown {
            cycle: cycle_vertices,
            spikes,
        },
    ))
}

pub fn generate(spec: &GenSpec) -> Result<(Graph, Option<Crown>), GenError> {
    match spec {
        GenSpec::RandomRegular { n, d, seed } => random_regular(*n, *d, *seed).map(|g| (g, None)),
        GenSpec::Paley { q } => paley(*q).map(|g| (g, None)),
        GenSpec::Fixture { cycle_len, spikes } => crown_fixture(*cycle_len, spikes).map(|(g, c)| (g, Some(c))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dense_lambda;

    #[test]
    fn random_regular_small() {
        let g = random_regular(10, 3, 1).unwrap();
        assert_eq!(g.n(), 10);
        assert!(g.is_regular() && g.degree_min() == 3);
        assert_eq!(g.edge_count(), 15);
        assert_eq!(random_regular(10, 3, 1).unwrap(), g);
    }

    #[test]
    fn random_regular_errors() {
        assert_eq!(random_regular(5, 3, 0), Err(GenError::Parity { n: 5, d: 3 }));
        assert_eq!(random_regular(4, 4, 0), Err(GenError::Degree { n: 4, d: 4 }));
        assert_eq!(random_regular(4, 0, 0), Err(GenError::Degree { n: 4, d: 0 }));
    }

    #[test]
    fn unique_cubic_on_four_vertices() {
        assert_eq!(random_regular(4, 3, 9).unwrap(), complete(4));
    }

    #[test]
    fn dense_regime_uses_switchings() {
        let g = random_regular(200, 60, 3).unwrap();
        assert!(g.is_regular() && g.degree_min() == 60);
        assert_eq!(g.edge_count(), 200 * 60 / 2);
    }

    #[test]
    fn moderate_degree_on_many_vertices() {
        for (n, d) in [(100, 10), (1000, 10), (5000, 6), (1000, 5)] {
            let g = random_regular(n, d, 1).unwrap();
            assert!(g.is_regular() && g.degree_min() == d);
        }
    }

    #[test]
    fn paley_examples() {
        assert_eq!(paley(5).unwrap(), cycle(5));
        let g = paley(13).unwrap();
        assert!(g.is_regular() && g.degree_min() == 6);
        let lam = dense_lambda(&g, 64).unwrap().lambda_est;
        assert!((lam - (13f64.sqrt() + 1.0) / 2.0).abs() < 1e-9);
        assert_eq!(paley(7), Err(GenError::PaleyOrder(7)));
        assert_eq!(paley(9), Err(GenError::PaleyOrder(9)));
    }

    #[test]
    fn petersen_is_cubic() {
        let p = petersen();
        assert_eq!(p.edge_count(), 15);
        assert!(p.is_regular() && p.degree_min() == 3);
    }

    #[test]
    fn crown_fixture_examples() {
        let (g, c) = crown_fixture(4, &[0, 2]).unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(c.spikes, vec![(0, 4), (2, 5)]);
        let (g, c) = crown_fixture(3, &[0, 1, 2]).unwrap();
        assert_eq!((g.n(), c.spikes.len()), (6, 3));
        assert!(matches!(crown_fixture(4, &[0, 0]), Err(GenError::Fixture(_))));
        assert!(matches!(crown_fixture(4, &[4]), Err(GenError::Fixture(_))));
    }
}
