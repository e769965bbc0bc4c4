//! Static simple graphs in CSR form, dense vertex sets, and the
//! neighbourhood calculus used throughout the crate.
//!
//! Vertices are dense `u32` ids `0..n`. Neighbour lists are sorted, so
//! adjacency queries are a binary search and common-neighbour tests are a
//! linear merge.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop at vertex {0}")]
    SelfLoop(u32),
    #[error("vertex {vertex} out of range for n = {n}")]
    OutOfRange { vertex: u64, n: usize },
    #[error("vertex sets U and W overlap in {0} vertices")]
    Overlap(usize),
    #[error("vertex set has universe {found}, graph has {expected} vertices")]
    UniverseMismatch { expected: usize, found: usize },
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A set of vertices over the universe `0..n`, stored as a bitset with a
/// cached cardinality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VertexSet {
    bits: Vec<u64>,
    universe: usize,
    len: usize,
}

impl VertexSet {
    pub fn new(universe: usize) -> Self {
        Self {
            bits: vec![0; universe.div_ceil(64)],
            universe,
            len: 0,
        }
    }

    pub fn full(universe: usize) -> Self {
        let mut set = Self::new(universe);
        for v in 0..universe {
            set.insert(v as u32);
        }
        set
    }

    pub fn from_vertices<I: IntoIterator<Item = u32>>(universe: usize, vertices: I) -> Self {
        let mut set = Self::new(universe);
        for v in vertices {
            set.insert(v);
        }
        set
    }

    #[inline]
    pub fn universe(&self) -> usize {
        self.universe
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, v: u32) -> bool {
        let v = v as usize;
        v < self.universe && self.bits[v >> 6] & (1 << (v & 63)) != 0
    }

    /// Returns true if `v` was newly inserted.
    ///
    /// Panics if `v` is outside the universe.
    #[inline]
    pub fn insert(&mut self, v: u32) -> bool {
        let i = v as usize;
        assert!(i < self.universe, "vertex {v} outside universe {}", self.universe);
        let word = &mut self.bits[i >> 6];
        let mask = 1 << (i & 63);
        let fresh = *word & mask == 0;
        *word |= mask;
        self.len += fresh as usize;
        fresh
    }

    /// Returns true if `v` was present.
    #[inline]
    pub fn remove(&mut self, v: u32) -> bool {
        let i = v as usize;
        if i >= self.universe {
            return false;
        }
        let word = &mut self.bits[i >> 6];
        let mask = 1 << (i & 63);
        let present = *word & mask != 0;
        *word &= !mask;
        self.len -= present as usize;
        present
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let bit = word.trailing_zeros();
                word &= word - 1;
                Some((w as u32) * 64 + bit)
            })
        })
    }

    pub fn to_vec(&self) -> Vec<u32> {
        self.iter().collect()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.universe, other.universe, "universe mismatch");
        let bits: Vec<u64> = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let len = bits.iter().map(|w| w.count_ones() as usize).sum();
        Self {
            bits,
            universe: self.universe,
            len,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> Self {
        let mut out = Self::full(self.universe);
        for v in self.iter() {
            out.remove(v);
        }
        out
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.universe == other.universe
            && self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.intersection_len(other) == 0
    }
}

#[derive(Serialize, Deserialize)]
struct VertexSetRepr {
    universe: usize,
    vertices: Vec<u32>,
}

impl Serialize for VertexSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VertexSetRepr {
            universe: self.universe,
            vertices: self.to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for VertexSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = VertexSetRepr::deserialize(deserializer)?;
        if let Some(&v) = repr.vertices.iter().find(|&&v| v as usize >= repr.universe) {
            return Err(serde::de::Error::custom(format!(
                "vertex {v} outside universe {}",
                repr.universe
            )));
        }
        Ok(Self::from_vertices(repr.universe, repr.vertices))
    }
}

impl fmt::Debug for VertexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Immutable simple undirected graph with sorted adjacency (CSR layout).
#[derive(Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    degree_min: usize,
    degree_max: usize,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n())
            .field("m", &self.edge_count())
            .field("degree_min", &self.degree_min)
            .field("degree_max", &self.degree_max)
            .finish()
    }
}

impl Graph {
    /// Builds a graph from an edge list. Duplicate edges (in either
    /// orientation) are collapsed; see [`Graph::from_edges_counted`] for the
    /// number collapsed.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        Self::from_edges_counted(n, edges).map(|(g, _)| g)
    }

    /// Like [`Graph::from_edges`], also returning how many duplicate edges
    /// were dropped.
    pub fn from_edges_counted(n: usize, edges: &[(u32, u32)]) -> Result<(Self, usize), GraphError> {
        assert!(n <= u32::MAX as usize, "vertex count exceeds u32 ids");
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            for w in [u, v] {
                if w as usize >= n {
                    return Err(GraphError::OutOfRange {
                        vertex: w as u64,
                        n,
                    });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut raw = vec![0u32; offsets[n]];
        for &(u, v) in edges {
            raw[fill[u as usize]] = v;
            fill[u as usize] += 1;
            raw[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }

        let mut targets = Vec::with_capacity(raw.len());
        let mut new_offsets = Vec::with_capacity(n + 1);
        new_offsets.push(0);
        let mut dropped_arcs = 0;
        for v in 0..n {
            let list = &mut raw[offsets[v]..offsets[v + 1]];
            list.sort_unstable();
            let before = targets.len();
            for (i, &w) in list.iter().enumerate() {
                if i == 0 || list[i - 1] != w {
                    targets.push(w);
                }
            }
            dropped_arcs += list.len() - (targets.len() - before);
            new_offsets.push(targets.len());
        }
        let degs = (0..n).map(|v| new_offsets[v + 1] - new_offsets[v]);
        let degree_min = degs.clone().min().unwrap_or(0);
        let degree_max = degs.max().unwrap_or(0);
        Ok((
            Self {
                offsets: new_offsets,
                targets,
                degree_min,
                degree_max,
            },
            dropped_arcs / 2,
        ))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: u32) -> usize {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degree_min(&self) -> usize {
        self.degree_min
    }

    pub fn degree_max(&self) -> usize {
        self.degree_max
    }

    pub fn is_regular(&self) -> bool {
        self.degree_min == self.degree_max
    }

    #[inline]
    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        (u as usize) < self.n() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// True if `u` and `v` share a neighbour (sorted-list merge).
    pub fn has_common_neighbor(&self, u: u32, v: u32) -> bool {
        let (a, b) = (self.neighbors(u), self.neighbors(v));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n() as u32).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub fn vertices(&self) -> VertexSet {
        VertexSet::full(self.n())
    }

    fn check_universe(&self, set: &VertexSet) -> Result<(), GraphError> {
        if set.universe() != self.n() {
            return Err(GraphError::UniverseMismatch {
                expected: self.n(),
                found: set.universe(),
            });
        }
        Ok(())
    }

    /// Ordered-pair edge count `e(B, C)`: an edge with both ends in `B ∩ C`
    /// is counted twice.
    pub fn e_count(&self, b: &VertexSet, c: &VertexSet) -> Result<usize, GraphError> {
        self.check_universe(b)?;
        self.check_universe(c)?;
        Ok(b.iter()
            .map(|u| self.neighbors(u).iter().filter(|&&v| c.contains(v)).count())
            .sum())
    }

    /// `Γ(U, W)`: vertices of `W` with at least one neighbour in `U`.
    /// `U` and `W` may overlap.
    pub fn gamma(&self, u: &VertexSet, w: &VertexSet) -> Result<VertexSet, GraphError> {
        self.check_universe(u)?;
        self.check_universe(w)?;
        let mut out = VertexSet::new(self.n());
        for x in u.iter() {
            for &y in self.neighbors(x) {
                if w.contains(y) {
                    out.insert(y);
                }
            }
        }
        Ok(out)
    }

    /// `N(U, W)` for disjoint `U`, `W`.
    pub fn nbhd(&self, u: &VertexSet, w: &VertexSet) -> Result<VertexSet, GraphError> {
        self.check_universe(u)?;
        self.check_universe(w)?;
        let overlap = u.intersection_len(w);
        if overlap > 0 {
            return Err(GraphError::Overlap(overlap));
        }
        self.gamma(u, w)
    }

    /// External neighbourhood `N(U) = N(U, V \ U)`.
    pub fn external_nbhd(&self, u: &VertexSet) -> Result<VertexSet, GraphError> {
        self.nbhd(u, &u.complement())
    }

    /// Number of neighbours of `v` inside `set`.
    pub fn degree_into(&self, v: u32, set: &VertexSet) -> usize {
        self.neighbors(v).iter().filter(|&&w| set.contains(w)).count()
    }

    /// SHA-256 over the canonical edge-list rendering, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{} {}\n", self.n(), self.edge_count()).as_bytes());
        for (u, v) in self.edges() {
            hasher.update(format!("{u} {v}\n").as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Parses the edge-list text format: a header line `n m`, then `m` lines
    /// `u v`. Blank lines and anything after `#` are ignored.
    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let mut header: Option<(usize, usize)> = None;
        let mut edges = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| GraphError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut fields = body.split_whitespace();
            let mut next = |what: &str| -> Result<u64, GraphError> {
                let tok = fields.next().ok_or_else(|| GraphError::Parse {
                    line: lineno,
                    msg: format!("missing {what}"),
                })?;
                tok.parse::<u64>().map_err(|_| GraphError::Parse {
                    line: lineno,
                    msg: format!("invalid {what} {tok:?}"),
                })
            };
            match header {
                None => {
                    let n = next("vertex count")?;
                    let m = next("edge count")?;
                    if n > u32::MAX as u64 {
                        return Err(GraphError::Parse {
                            line: lineno,
                            msg: "vertex count too large".into(),
                        });
                    }
                    header = Some((n as usize, m as usize));
                    edges.reserve(m as usize);
                }
                Some((n, _)) => {
                    let u = next("endpoint")?;
                    let v = next("endpoint")?;
                    for w in [u, v] {
                        if w >= n as u64 {
                            return Err(GraphError::Parse {
                                line: lineno,
                                msg: GraphError::OutOfRange { vertex: w, n }.to_string(),
                            });
                        }
                    }
                    edges.push((u as u32, v as u32));
                }
            }
            if fields.next().is_some() {
                return Err(GraphError::Parse {
                    line: lineno,
                    msg: "trailing tokens".into(),
                });
            }
        }
        let (n, m) = header.ok_or(GraphError::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        if edges.len() != m {
            return Err(GraphError::Parse {
                line: 0,
                msg: format!("header declares {m} edges, found {}", edges.len()),
            });
        }
        Self::from_edges(n, &edges)
    }

    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.n(), self.edge_count())?;
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }
}
