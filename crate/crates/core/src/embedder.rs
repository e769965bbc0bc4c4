//! Rollback-capable forest embeddings in a host graph.
//!
//! [`PartialEmbedding`] maps a bounded-degree forest injectively into a
//! fixed universe of host vertices. Forests grow by leaves and shrink by
//! leaves. Goodness (the slack inequality
//! `|Γ(X) ∖ φ(F)| ≥ Σ_{v∈X} [D − deg_F(φ⁻¹(v))] + |φ(F) ∩ X|` for all
//! `|X| ≤ s`) can be evaluated exactly on small hosts, either from the
//! forest alone or from the incremental bookkeeping.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, VertexSet};
use crate::rng::{SeedSource, Stream};

pub type NodeId = usize;

const NO_NODE: u32 = u32::MAX;
/// Largest universe the exact goodness evaluators accept (bitmask width).
pub const EXACT_UNIVERSE_CAP: usize = 64;
pub const DEFAULT_SUBSET_CAP: u64 = 1 << 22;
pub const DEFAULT_BACKTRACK_BUDGET: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Candidate with the most unused universe neighbours, lowest id on ties.
    #[default]
    MaxFreeNeighbors,
    LowestId,
    /// Like `MaxFreeNeighbors`, but only accept candidates after which the
    /// exact incremental goodness check passes. Small hosts only.
    Certified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum TraceOp {
    Place { node: NodeId, image: u32 },
    Extend { node: NodeId, parent: NodeId, image: u32 },
    Rollback { node: NodeId, image: u32 },
}

/// Local picture around a parent whose extension failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Saturation {
    pub parent: NodeId,
    pub image: u32,
    pub host_degree: usize,
    pub in_universe: usize,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("unknown forest vertex {0}")]
    UnknownNode(NodeId),
    #[error("{count} target vertices lie outside the host universe")]
    TargetsOutsideUniverse { count: usize },
    #[error("vertex {0} is outside the universe or already used")]
    ImageUnavailable(u32),
    #[error("forest vertex {node} already has degree {degree} = cap")]
    DegreeCap { node: NodeId, degree: usize },
    #[error("forest would reach {size} vertices, limit {limit}")]
    SizeLimit { size: usize, limit: usize },
    #[error("no unused neighbour for forest vertex {} (image {})", .0.parent, .0.image)]
    Saturated(Saturation),
    #[error("no candidate keeps the embedding good at forest vertex {parent}")]
    NoGoodCandidate { parent: NodeId, tried: usize },
    #[error("forest vertex {node} has degree {degree}, not a leaf")]
    NotLeaf { node: NodeId, degree: usize },
    #[error("universe has no unused vertex")]
    UniverseExhausted,
    #[error("tree needs {needed} new vertices, universe has {available} unused")]
    InsufficientRoom { needed: usize, available: usize },
    #[error("goodness enumeration needs {subsets} subsets over {universe} vertices (cap {cap})")]
    EnumerationTooLarge { subsets: u128, universe: usize, cap: u64 },
    #[error("tree shape: {0}")]
    Shape(String),
    #[error("tree vertex {node} would have degree {degree} > cap {cap}")]
    TreeDegree { node: usize, degree: usize, cap: usize },
    #[error("tree embedding stopped after {placed} of {total} vertices: {cause}")]
    TreeFailed {
        placed: usize,
        total: usize,
        backtracks: usize,
        prefix: Vec<NodeId>,
        cause: Box<EmbedError>,
    },
}

#[derive(Debug, Clone, Default)]
struct Node {
    alive: bool,
    image: u32,
    nbrs: Vec<NodeId>,
}

/// An embedding `φ: F ↪ G[universe]` of a forest with maximum degree `cap`.
#[derive(Clone)]
pub struct PartialEmbedding<'g> {
    host: &'g Graph,
    universe: VertexSet,
    nodes: Vec<Node>,
    free_slots: Vec<NodeId>,
    owner: Vec<u32>,
    used: VertexSet,
    /// Unused universe neighbours of each host vertex.
    free_deg: Vec<u32>,
    scale: usize,
    cap: usize,
    size_limit: usize,
    live: usize,
    trace: Option<Vec<TraceOp>>,
}

impl std::fmt::Debug for PartialEmbedding<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PartialEmbedding")
            .field("size", &self.live)
            .field("scale", &self.scale)
            .field("cap", &self.cap)
            .field("edges", &self.image_edges())
            .finish()
    }
}

impl PartialEq for PartialEmbedding<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.used == other.used && self.image_edges() == other.image_edges()
    }
}

/// Report from a goodness evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub good: bool,
    pub checked: u64,
    pub exhaustive: bool,
    pub witness: Option<Vec<u32>>,
}

impl<'g> PartialEmbedding<'g> {
    /// Empty embedding. The size limit defaults to `scale/2 + 1`.
    pub fn new(host: &'g Graph, universe: VertexSet, scale: usize, cap: usize) -> Self {
        let n = host.n();
        assert_eq!(universe.universe(), n, "universe sized for a different graph");
        let free_deg = (0..n as u32)
            .map(|v| host.degree_into(v, &universe) as u32)
            .collect();
        Self {
            host,
            universe,
            nodes: Vec::new(),
            free_slots: Vec::new(),
            owner: vec![NO_NODE; n],
            used: VertexSet::new(n),
            free_deg,
            scale,
            cap,
            size_limit: scale / 2 + 1,
            live: 0,
            trace: None,
        }
    }

    /// Edgeless forest mapped onto `targets` in ascending order.
    pub fn init(
        host: &'g Graph,
        universe: VertexSet,
        targets: &VertexSet,
        scale: usize,
        cap: usize,
    ) -> Result<(Self, Vec<NodeId>), EmbedError> {
        let outside = targets.difference(&universe).len();
        if outside > 0 {
            return Err(EmbedError::TargetsOutsideUniverse { count: outside });
        }
        let mut e = Self::new(host, universe, scale, cap);
        e.size_limit = e.size_limit.max(targets.len());
        let ids = targets
            .iter()
            .map(|v| e.place(v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((e, ids))
    }

    pub fn with_size_limit(mut self, limit: usize) -> Self {
        self.size_limit = limit;
        self
    }

    pub fn set_size_limit(&mut self, limit: usize) {
        self.size_limit = limit;
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceOp]> {
        self.trace.as_deref()
    }

    pub fn host(&self) -> &'g Graph {
        self.host
    }

    pub fn universe(&self) -> &VertexSet {
        &self.universe
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn size_limit(&self) -> usize {
        self.size_limit
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn used(&self) -> &VertexSet {
        &self.used
    }

    pub fn free_degree(&self, v: u32) -> usize {
        self.free_deg[v as usize] as usize
    }

    fn node(&self, id: NodeId) -> Result<&Node, EmbedError> {
        self.nodes
            .get(id)
            .filter(|n| n.alive)
            .ok_or(EmbedError::UnknownNode(id))
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.node(id).is_ok()
    }

    pub fn image(&self, id: NodeId) -> Result<u32, EmbedError> {
        self.node(id).map(|n| n.image)
    }

    pub fn degree(&self, id: NodeId) -> Result<usize, EmbedError> {
        self.node(id).map(|n| n.nbrs.len())
    }

    pub fn forest_neighbors(&self, id: NodeId) -> Result<&[NodeId], EmbedError> {
        self.node(id).map(|n| n.nbrs.as_slice())
    }

    pub fn node_at(&self, v: u32) -> Option<NodeId> {
        let o = self.owner[v as usize];
        (o != NO_NODE).then_some(o as NodeId)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive)
            .map(|(i, _)| i)
    }

    /// Images of forest edges, each as `(min, max)`, sorted.
    pub fn image_edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for n in self.nodes.iter().filter(|n| n.alive) {
            for &m in &n.nbrs {
                let other = self.nodes[m].image;
                if n.image < other {
                    out.push((n.image, other));
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn alloc(&mut self, image: u32) -> Result<NodeId, EmbedError> {
        if self.live >= self.size_limit {
            return Err(EmbedError::SizeLimit {
                size: self.live + 1,
                limit: self.size_limit,
            });
        }
        if !self.universe.contains(image) || self.used.contains(image) {
            return Err(EmbedError::ImageUnavailable(image));
        }
        let id = match self.free_slots.pop() {
            Some(id) => id,
            None => {
                self.nodes.push(Node::default());
                self.nodes.len() - 1
            }
        };
        let node = &mut self.nodes[id];
        node.alive = true;
        node.image = image;
        node.nbrs.clear();
        self.owner[image as usize] = id as u32;
        self.used.insert(image);
        for &w in self.host.neighbors(image) {
            self.free_deg[w as usize] -= 1;
        }
        self.live += 1;
        Ok(id)
    }

    /// Add an isolated forest vertex at `v`.
    pub fn place(&mut self, v: u32) -> Result<NodeId, EmbedError> {
        let id = self.alloc(v)?;
        if let Some(t) = &mut self.trace {
            t.push(TraceOp::Place { node: id, image: v });
        }
        Ok(id)
    }

    /// Add an isolated forest vertex at the unused universe vertex with the
    /// most unused neighbours (lowest id on ties).
    pub fn place_fresh(&mut self) -> Result<NodeId, EmbedError> {
        let best = self
            .universe
            .iter()
            .filter(|&v| !self.used.contains(v))
            .max_by_key(|&v| (self.free_deg[v as usize], std::cmp::Reverse(v)))
            .ok_or(EmbedError::UniverseExhausted)?;
        self.place(best)
    }

    fn check_parent(&self, parent: NodeId) -> Result<u32, EmbedError> {
        let p = self.node(parent)?;
        if p.nbrs.len() >= self.cap {
            return Err(EmbedError::DegreeCap {
                node: parent,
                degree: p.nbrs.len(),
            });
        }
        Ok(p.image)
    }

    fn attach(&mut self, parent: NodeId, v: u32) -> Result<NodeId, EmbedError> {
        let id = self.alloc(v)?;
        self.nodes[id].nbrs.push(parent);
        self.nodes[parent].nbrs.push(id);
        if let Some(t) = &mut self.trace {
            t.push(TraceOp::Extend {
                node: id,
                parent,
                image: v,
            });
        }
        Ok(id)
    }

    /// Unused universe neighbours of `φ(parent)` not in `exclude`, in
    /// policy order.
    pub fn candidates(&self, parent: NodeId, policy: Policy, exclude: &[u32]) -> Vec<u32> {
        let Ok(p) = self.node(parent) else {
            return Vec::new();
        };
        let mut c: Vec<u32> = self
            .host
            .neighbors(p.image)
            .iter()
            .copied()
            .filter(|&w| {
                self.universe.contains(w) && !self.used.contains(w) && !exclude.contains(&w)
            })
            .collect();
        if policy != Policy::LowestId {
            c.sort_by_key(|&w| (std::cmp::Reverse(self.free_deg[w as usize]), w));
        }
        c
    }

    fn saturation(&self, parent: NodeId, exclude: &[u32]) -> Saturation {
        let image = self.nodes[parent].image;
        let nb = self.host.neighbors(image);
        let in_u: Vec<u32> = nb
            .iter()
            .copied()
            .filter(|&w| self.universe.contains(w))
            .collect();
        Saturation {
            parent,
            image,
            host_degree: nb.len(),
            in_universe: in_u.len(),
            used: in_u.iter().filter(|&&w| self.used.contains(w)).count(),
            excluded: in_u
                .iter()
                .filter(|&&w| !self.used.contains(w) && exclude.contains(&w))
                .count(),
        }
    }

    pub fn extend_leaf(&mut self, parent: NodeId, policy: Policy) -> Result<NodeId, EmbedError> {
        self.extend_leaf_excluding(parent, policy, &[])
    }

    /// Attach a new leaf to `parent`, mapped to an unused universe
    /// neighbour of `φ(parent)` outside `exclude`.
    pub fn extend_leaf_excluding(
        &mut self,
        parent: NodeId,
        policy: Policy,
        exclude: &[u32],
    ) -> Result<NodeId, EmbedError> {
        let image = self.check_parent(parent)?;
        if self.live >= self.size_limit {
            return Err(EmbedError::SizeLimit {
                size: self.live + 1,
                limit: self.size_limit,
            });
        }
        match policy {
            Policy::MaxFreeNeighbors | Policy::LowestId => {
                let mut best: Option<(u32, u32)> = None;
                for &w in self.host.neighbors(image) {
                    if !self.universe.contains(w)
                        || self.used.contains(w)
                        || exclude.contains(&w)
                    {
                        continue;
                    }
                    if policy == Policy::LowestId {
                        best = Some((0, w));
                        break;
                    }
                    let f = self.free_deg[w as usize];
                    if best.is_none_or(|(bf, _)| f > bf) {
                        best = Some((f, w));
                    }
                }
                match best {
                    Some((_, w)) => self.attach(parent, w),
                    None => Err(EmbedError::Saturated(self.saturation(parent, exclude))),
                }
            }
            Policy::Certified => {
                let cands = self.candidates(parent, policy, exclude);
                if cands.is_empty() {
                    return Err(EmbedError::Saturated(self.saturation(parent, exclude)));
                }
                for &w in &cands {
                    let id = self.attach(parent, w)?;
                    if self.goodness_incremental(DEFAULT_SUBSET_CAP)?.good {
                        return Ok(id);
                    }
                    self.rollback_leaf(id)?;
                }
                Err(EmbedError::NoGoodCandidate {
                    parent,
                    tried: cands.len(),
                })
            }
        }
    }

    /// Attach a new leaf to `parent` at the given host vertex.
    pub fn extend_to(&mut self, parent: NodeId, v: u32) -> Result<NodeId, EmbedError> {
        let image = self.check_parent(parent)?;
        if !self.host.has_edge(image, v) {
            return Err(EmbedError::ImageUnavailable(v));
        }
        self.attach(parent, v)
    }

    /// Remove a forest vertex of degree at most one.
    pub fn rollback_leaf(&mut self, id: NodeId) -> Result<(), EmbedError> {
        let node = self.node(id)?;
        if node.nbrs.len() > 1 {
            return Err(EmbedError::NotLeaf {
                node: id,
                degree: node.nbrs.len(),
            });
        }
        let image = node.image;
        if let Some(&p) = node.nbrs.first() {
            let pn = &mut self.nodes[p].nbrs;
            let pos = pn.iter().position(|&x| x == id).expect("forest adjacency symmetric");
            pn.swap_remove(pos);
        }
        let node = &mut self.nodes[id];
        node.alive = false;
        node.nbrs.clear();
        self.free_slots.push(id);
        self.owner[image as usize] = NO_NODE;
        self.used.remove(image);
        for &w in self.host.neighbors(image) {
            self.free_deg[w as usize] += 1;
        }
        self.live -= 1;
        if let Some(t) = &mut self.trace {
            t.push(TraceOp::Rollback { node: id, image });
        }
        Ok(())
    }

    /// Full structural audit: injective, edge-preserving, degrees within
    /// cap, bookkeeping consistent with the forest.
    pub fn check_structure(&self) -> Result<(), String> {
        let mut seen = VertexSet::new(self.host.n());
        let mut count = 0;
        for (id, n) in self.nodes.iter().enumerate().filter(|(_, n)| n.alive) {
            count += 1;
            if !seen.insert(n.image) {
                return Err(format!("image {} used twice", n.image));
            }
            if !self.universe.contains(n.image) {
                return Err(format!("image {} outside universe", n.image));
            }
            if self.owner[n.image as usize] != id as u32 {
                return Err(format!("owner map stale at {}", n.image));
            }
            if n.nbrs.len() > self.cap {
                return Err(format!("vertex {id} exceeds degree cap"));
            }
            for &m in &n.nbrs {
                let other = self.nodes.get(m).filter(|o| o.alive).ok_or(format!(
                    "vertex {id} adjacent to dead vertex {m}"
                ))?;
                if !other.nbrs.contains(&id) {
                    return Err(format!("asymmetric forest edge {id}-{m}"));
                }
                if !self.host.has_edge(n.image, other.image) {
                    return Err(format!("forest edge {id}-{m} not a host edge"));
                }
            }
        }
        if seen != self.used || count != self.live {
            return Err("used set differs from image".into());
        }
        for v in 0..self.host.n() as u32 {
            let expect = self
                .host
                .neighbors(v)
                .iter()
                .filter(|&&w| self.universe.contains(w) && !seen.contains(w))
                .count();
            if expect != self.free_deg[v as usize] as usize {
                return Err(format!("free degree stale at {v}"));
            }
        }
        Ok(())
    }

    fn exact_frame(&self, cap: u64) -> Result<(Vec<u32>, Vec<u64>), EmbedError> {
        let local = self.universe.to_vec();
        let subsets = subset_count(local.len(), self.scale);
        if local.len() > EXACT_UNIVERSE_CAP || subsets > cap as u128 {
            return Err(EmbedError::EnumerationTooLarge {
                subsets,
                universe: local.len(),
                cap,
            });
        }
        let mut index = vec![usize::MAX; self.host.n()];
        for (i, &v) in local.iter().enumerate() {
            index[v as usize] = i;
        }
        let adj = local
            .iter()
            .map(|&v| {
                self.host
                    .neighbors(v)
                    .iter()
                    .filter(|&&w| index[w as usize] != usize::MAX)
                    .fold(0u64, |m, &w| m | 1 << index[w as usize])
            })
            .collect();
        Ok((local, adj))
    }

    /// Brute-force goodness, with used vertices and degrees read off the
    /// forest itself rather than the bookkeeping.
    pub fn goodness_exact(&self, cap: u64) -> Result<GoodnessReport, EmbedError> {
        let (local, adj) = self.exact_frame(cap)?;
        let mut deg = std::collections::HashMap::new();
        for n in self.nodes.iter().filter(|n| n.alive) {
            deg.insert(n.image, n.nbrs.len());
        }
        let mut free = 0u64;
        let weight: Vec<i64> = local
            .iter()
            .enumerate()
            .map(|(i, v)| match deg.get(v) {
                Some(&d) => self.cap as i64 - d as i64 + 1,
                None => {
                    free |= 1 << i;
                    self.cap as i64
                }
            })
            .collect();
        Ok(enumerate_goodness(&local, &adj, free, &weight, self.scale))
    }

    /// Goodness from the maintained `used`/owner bookkeeping.
    pub fn goodness_incremental(&self, cap: u64) -> Result<GoodnessReport, EmbedError> {
        let (local, adj) = self.exact_frame(cap)?;
        let mut free = 0u64;
        let weight: Vec<i64> = local
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if self.used.contains(v) {
                    let id = self.owner[v as usize] as usize;
                    self.cap as i64 - self.nodes[id].nbrs.len() as i64 + 1
                } else {
                    free |= 1 << i;
                    self.cap as i64
                }
            })
            .collect();
        // Singletons straight from the maintained free degrees.
        if self.scale >= 1 {
            for (i, &v) in local.iter().enumerate() {
                if (self.free_deg[v as usize] as i64) < weight[i] {
                    return Ok(GoodnessReport {
                        good: false,
                        checked: i as u64 + 1,
                        exhaustive: true,
                        witness: Some(vec![v]),
                    });
                }
            }
        }
        Ok(enumerate_goodness(&local, &adj, free, &weight, self.scale))
    }

    /// Random sets `X` with `|X| ≤ min(scale, max_size)`; never a proof.
    pub fn goodness_sampled(&self, samples: usize, max_size: usize, seed: u64) -> GoodnessReport {
        let local = self.universe.to_vec();
        let top = self.scale.min(max_size).min(local.len());
        let mut rng = SeedSource::new(seed).stream(Stream::Audit);
        let mut mark = vec![false; self.host.n()];
        let mut touched = Vec::new();
        for k in 0..samples {
            if top == 0 {
                break;
            }
            let size = rng.gen_range(1..=top);
            let x: Vec<u32> = sample(&mut rng, local.len(), size)
                .iter()
                .map(|i| local[i])
                .collect();
            let mut lhs = 0i64;
            let mut rhs = 0i64;
            for &v in &x {
                for &w in self.host.neighbors(v) {
                    if self.universe.contains(w) && !self.used.contains(w) && !mark[w as usize] {
                        mark[w as usize] = true;
                        touched.push(w);
                        lhs += 1;
                    }
                }
                rhs += match self.node_at(v) {
                    Some(id) => self.cap as i64 - self.nodes[id].nbrs.len() as i64 + 1,
                    None => self.cap as i64,
                };
            }
            for w in touched.drain(..) {
                mark[w as usize] = false;
            }
            if lhs < rhs {
                return GoodnessReport {
                    good: false,
                    checked: k as u64 + 1,
                    exhaustive: false,
                    witness: Some(x),
                };
            }
        }
        GoodnessReport {
            good: true,
            checked: samples as u64,
            exhaustive: false,
            witness: None,
        }
    }
}

/// `Σ_{j ≤ s} C(m, j)`, saturating.
pub fn subset_count(m: usize, s: usize) -> u128 {
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for j in 0..=s.min(m) {
        total = total.saturating_add(c);
        c = c.saturating_mul((m - j) as u128) / (j as u128 + 1);
    }
    total
}

fn enumerate_goodness(
    local: &[u32],
    adj: &[u64],
    free: u64,
    weight: &[i64],
    s: usize,
) -> GoodnessReport {
    struct Walk<'a> {
        adj: &'a [u64],
        free: u64,
        weight: &'a [i64],
        s: usize,
        checked: u64,
    }
    impl Walk<'_> {
        fn go(&mut self, start: usize, depth: usize, gamma: u64, w: i64, set: u64) -> Option<u64> {
            for i in start..self.adj.len() {
                let g2 = gamma | self.adj[i];
                let w2 = w + self.weight[i];
                let x = set | 1 << i;
                self.checked += 1;
                if ((g2 & self.free).count_ones() as i64) < w2 {
                    return Some(x);
                }
                if depth + 1 < self.s {
                    if let Some(bad) = self.go(i + 1, depth + 1, g2, w2, x) {
                        return Some(bad);
                    }
                }
            }
            None
        }
    }
    let mut walk = Walk {
        adj,
        free,
        weight,
        s,
        checked: 0,
    };
    let bad = if s == 0 { None } else { walk.go(0, 0, 0, 0, 0) };
    GoodnessReport {
        good: bad.is_none(),
        checked: walk.checked,
        exhaustive: true,
        witness: bad.map(|m| {
            (0..local.len())
                .filter(|&i| m >> i & 1 == 1)
                .map(|i| local[i])
                .collect()
        }),
    }
}

/// Options for [`expanding_check`].
#[derive(Debug, Clone)]
pub struct ExpandOptions {
    /// Exhaustive only when `Σ_{j≤s} C(|U|, j)` is at most this.
    pub max_subsets: u64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self {
            max_subsets: 1 << 20,
            samples: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCheck {
    pub holds: bool,
    pub exhaustive: bool,
    pub checked: u64,
    pub witness: Option<Vec<u32>>,
    pub witness_nbhd: Option<usize>,
}

/// Whether every `X ⊆ U` with `|X| ≤ s` has `|N(X, U)| ≥ k·|X|`, where
/// `N(X, U)` is the neighbourhood of `X` inside `U ∖ X`.
pub fn expanding_check(
    g: &Graph,
    u: &VertexSet,
    s: usize,
    k: f64,
    opts: &ExpandOptions,
) -> ExpansionCheck {
    let local = u.to_vec();
    let s = s.min(local.len());
    if s == 0 {
        return ExpansionCheck {
            holds: true,
            exhaustive: true,
            checked: 0,
            witness: None,
            witness_nbhd: None,
        };
    }
    if subset_count(local.len(), s) <= opts.max_subsets as u128 {
        exhaustive_expansion(g, u, &local, s, k)
    } else {
        sampled_expansion(g, u, &local, s, k, opts)
    }
}

fn exhaustive_expansion(g: &Graph, u: &VertexSet, local: &[u32], s: usize, k: f64) -> ExpansionCheck {
    struct Walk<'a> {
        g: &'a Graph,
        u: &'a VertexSet,
        local: &'a [u32],
        s: usize,
        k: f64,
        cnt: Vec<u32>,
        in_x: Vec<bool>,
        covered: usize,
        stack: Vec<u32>,
        checked: u64,
    }
    impl Walk<'_> {
        fn push(&mut self, x: u32) {
            self.in_x[x as usize] = true;
            if self.cnt[x as usize] > 0 {
                self.covered -= 1;
            }
            for &w in self.g.neighbors(x) {
                if self.u.contains(w) {
                    self.cnt[w as usize] += 1;
                    if self.cnt[w as usize] == 1 && !self.in_x[w as usize] {
                        self.covered += 1;
                    }
                }
            }
            self.stack.push(x);
        }
        fn pop(&mut self) {
            let x = self.stack.pop().expect("non-empty");
            for &w in self.g.neighbors(x) {
                if self.u.contains(w) {
                    self.cnt[w as usize] -= 1;
                    if self.cnt[w as usize] == 0 && !self.in_x[w as usize] {
                        self.covered -= 1;
                    }
                }
            }
            self.in_x[x as usize] = false;
            if self.cnt[x as usize] > 0 {
                self.covered += 1;
            }
        }
        fn go(&mut self, start: usize) -> bool {
            for i in start..self.local.len() {
                self.push(self.local[i]);
                self.checked += 1;
                if (self.covered as f64) < self.k * self.stack.len() as f64 {
                    return false;
                }
                if self.stack.len() < self.s && !self.go(i + 1) {
                    return false;
                }
                self.pop();
            }
            true
        }
    }
    let n = g.n();
    let mut walk = Walk {
        g,
        u,
        local,
        s,
        k,
        cnt: vec![0; n],
        in_x: vec![false; n],
        covered: 0,
        stack: Vec::new(),
        checked: 0,
    };
    let holds = walk.go(0);
    ExpansionCheck {
        holds,
        exhaustive: true,
        checked: walk.checked,
        witness: (!holds).then(|| {
            let mut w = walk.stack.clone();
            w.sort_unstable();
            w
        }),
        witness_nbhd: (!holds).then_some(walk.covered),
    }
}

fn external_size(g: &Graph, u: &VertexSet, x: &[u32]) -> usize {
    let xs = VertexSet::from_vertices(g.n(), x.iter().copied());
    let mut nb = VertexSet::new(g.n());
    for &v in x {
        for &w in g.neighbors(v) {
            if u.contains(w) && !xs.contains(w) {
                nb.insert(w);
            }
        }
    }
    nb.len()
}

fn sampled_expansion(
    g: &Graph,
    u: &VertexSet,
    local: &[u32],
    s: usize,
    k: f64,
    opts: &ExpandOptions,
) -> ExpansionCheck {
    let mut rng = SeedSource::new(opts.seed).stream(Stream::Audit);
    for i in 0..opts.samples {
        let size = rng.gen_range(1..=s);
        let mut x: Vec<u32> = sample(&mut rng, local.len(), size)
            .iter()
            .map(|j| local[j])
            .collect();
        let nb = external_size(g, u, &x);
        if (nb as f64) < k * size as f64 {
            x.sort_unstable();
            return ExpansionCheck {
                holds: false,
                exhaustive: false,
                checked: i as u64 + 1,
                witness: Some(x),
                witness_nbhd: Some(nb),
            };
        }
    }
    ExpansionCheck {
        holds: true,
        exhaustive: false,
        checked: opts.samples as u64,
        witness: None,
        witness_nbhd: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub kept: VertexSet,
    pub removed: VertexSet,
    pub rounds: usize,
    pub threshold: f64,
    /// Whether the input satisfied `|U| ≥ n/2`.
    pub hypothesis_met: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CleanOptions {
    /// Also search violating sets of sizes `2..=search_max_size`.
    pub search_max_size: usize,
    pub max_subsets: u64,
}

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("cleaning removed {removed} vertices, more than delta*n = {limit}")]
    TooManyRemoved { removed: usize, limit: usize },
    #[error("delta = {0} outside (0, 1)")]
    BadDelta(f64),
}

/// Peel `U` down to a set in which small sets expand by
/// `C = (1 − 6δ)/(4δ)`.
pub fn clean_to_expander(
    g: &Graph,
    u: &VertexSet,
    delta: f64,
    opts: &CleanOptions,
) -> Result<CleanReport, CleanError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CleanError::BadDelta(delta));
    }
    let n = g.n();
    let c = (1.0 - 6.0 * delta) / (4.0 * delta);
    let mut cur = u.clone();
    let mut deg: Vec<usize> = (0..n as u32).map(|v| g.degree_into(v, &cur)).collect();
    let mut rounds = 0;
    loop {
        // Singleton peeling in waves.
        loop {
            let wave: Vec<u32> = cur.iter().filter(|&v| (deg[v as usize] as f64) < c).collect();
            if wave.is_empty() {
                break;
            }
            rounds += 1;
            for v in wave {
                cur.remove(v);
                for &w in g.neighbors(v) {
                    deg[w as usize] -= 1;
                }
            }
        }
        if opts.search_max_size < 2 {
            break;
        }
        let search = ExpandOptions {
            max_subsets: opts.max_subsets,
            samples: 0,
            seed: 0,
        };
        let check = expanding_check(g, &cur, opts.search_max_size, c, &search);
        match check.witness {
            Some(w) if check.exhaustive => {
                rounds += 1;
                for v in w {
                    cur.remove(v);
                    for &x in g.neighbors(v) {
                        deg[x as usize] -= 1;
                    }
                }
            }
            _ => break,
        }
    }
    let removed = u.difference(&cur);
    let limit = (delta * n as f64).floor() as usize;
    if removed.len() > limit {
        return Err(CleanError::TooManyRemoved {
            removed: removed.len(),
            limit,
        });
    }
    Ok(CleanReport {
        kept: cur,
        removed,
        rounds,
        threshold: c,
        hypothesis_met: 2 * u.len() >= n,
    })
}

/// A rooted forest in build order: every vertex's parent precedes it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    parent: Vec<Option<usize>>,
}

impl TreeShape {
    pub fn new(parent: Vec<Option<usize>>) -> Result<Self, EmbedError> {
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= i {
                    return Err(EmbedError::Shape(format!(
                        "vertex {i} has parent {p} not before it"
                    )));
                }
            }
        }
        Ok(Self { parent })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parent[i].is_none()).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                d[i] += 1;
                d[p] += 1;
            }
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// `i, parent(i), …, root`.
    pub fn path_to_root(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![i];
        while let Some(p) = self.parent[i] {
            out.push(p);
            i = p;
        }
        out
    }

    /// Path with `edges` edges.
    pub fn path(edges: usize) -> Self {
        Self {
            parent: (0..=edges).map(|i| i.checked_sub(1)).collect(),
        }
    }

    pub fn star(leaves: usize) -> Self {
        Self {
            parent: (0..=leaves).map(|i| (i > 0).then_some(0)).collect(),
        }
    }

    pub fn complete_binary(depth: usize) -> Self {
        Self::binary_forest(1, depth)
    }

    /// `roots` complete binary trees of the given depth, built level by
    /// level with the trees interleaved. Level `k` of root `j` occupies a
    /// contiguous block; see [`binary_forest_index`].
    pub fn binary_forest(roots: usize, depth: usize) -> Self {
        let mut parent: Vec<Option<usize>> = vec![None; roots];
        let mut prev: Vec<usize> = (0..roots).collect();
        for _ in 0..depth {
            let mut next = Vec::with_capacity(prev.len() * 2);
            for &p in &prev {
                for _ in 0..2 {
                    next.push(parent.len());
                    parent.push(Some(p));
                }
            }
            prev = next;
        }
        Self { parent }
    }

    /// Double broom: a path `0..=ell` with complete binary trees of depth
    /// `t` hung from both ends. Brush vertices follow the path and are
    /// interleaved level by level, left brush first.
    pub fn double_broom(ell: usize, t: usize) -> Self {
        let mut parent: Vec<Option<usize>> = (0..=ell).map(|i| i.checked_sub(1)).collect();
        let mut prev = vec![0, ell];
        for _ in 0..t {
            let mut next = Vec::with_capacity(prev.len() * 2);
            for &p in &prev {
                for _ in 0..2 {
                    next.push(parent.len());
                    parent.push(Some(p));
                }
            }
            prev = next;
        }
        Self { parent }
    }
}

fn level_index(level1_start: usize, roots: usize, j: usize, k: usize) -> usize {
    let level = (usize::BITS - 1 - (k + 1).leading_zeros()) as usize;
    let first = (1usize << level) - 1;
    level1_start + roots * (first - 1) + j * (1 << level) + (k - first)
}

/// Position in [`TreeShape::binary_forest`] of heap index `k` (root 0,
/// children `2k+1`, `2k+2`) in tree `j`.
pub fn binary_forest_index(roots: usize, j: usize, k: usize) -> usize {
    if k == 0 {
        j
    } else {
        level_index(roots, roots, j, k)
    }
}

/// Position in [`TreeShape::double_broom`] of heap index `k` in brush `j`
/// (0 hangs from path vertex 0, 1 from path vertex `ell`).
pub fn double_broom_index(ell: usize, j: usize, k: usize) -> usize {
    match (k, j) {
        (0, 0) => 0,
        (0, _) => ell,
        _ => level_index(ell + 1, 2, j, k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Root is an existing forest vertex.
    Existing(NodeId),
    /// Root placed at the best unused universe vertex.
    Fresh,
    At(u32),
}

/// Embed `shape` into `e`, matching roots to `anchors` in order. Returns
/// the forest vertex of every shape vertex. Failed candidates are retried
/// by chronological backtracking, at most `budget` times per shape vertex.
pub fn embed_shape(
    e: &mut PartialEmbedding<'_>,
    shape: &TreeShape,
    anchors: &[Anchor],
    policy: Policy,
    budget: usize,
) -> Result<Vec<NodeId>, EmbedError> {
    let roots = shape.roots();
    if roots.len() != anchors.len() {
        return Err(EmbedError::Shape(format!(
            "{} roots but {} anchors",
            roots.len(),
            anchors.len()
        )));
    }
    let deg = shape.degrees();
    let mut new_vertices = shape.len();
    for (&r, a) in roots.iter().zip(anchors) {
        if let Anchor::Existing(id) = *a {
            let d = e.degree(id)? + deg[r];
            if d > e.cap() {
                return Err(EmbedError::TreeDegree {
                    node: r,
                    degree: d,
                    cap: e.cap(),
                });
            }
            new_vertices -= 1;
        }
    }
    if let Some((i, &d)) = deg.iter().enumerate().find(|(_, &d)| d > e.cap()) {
        return Err(EmbedError::TreeDegree {
            node: i,
            degree: d,
            cap: e.cap(),
        });
    }
    if e.len() + new_vertices > e.size_limit() {
        return Err(EmbedError::SizeLimit {
            size: e.len() + new_vertices,
            limit: e.size_limit(),
        });
    }
    let available = e.universe().len() - e.universe().intersection_len(e.used());
    if new_vertices > available {
        return Err(EmbedError::InsufficientRoom {
            needed: new_vertices,
            available,
        });
    }

    let mut anchor_of = vec![None; shape.len()];
    for (&r, &a) in roots.iter().zip(anchors) {
        anchor_of[r] = Some(a);
    }
    let mut map: Vec<NodeId> = vec![usize::MAX; shape.len()];
    let mut excluded: Vec<Vec<u32>> = vec![Vec::new(); shape.len()];
    let mut retries = vec![0usize; shape.len()];
    let mut backtracks = 0;
    let mut i = 0;
    let fail = |map: &[NodeId], i: usize, backtracks: usize, cause| EmbedError::TreeFailed {
        placed: i,
        total: shape.len(),
        backtracks,
        prefix: map[..i].to_vec(),
        cause: Box::new(cause),
    };
    while i < shape.len() {
        let step = match shape.parent(i) {
            None => match anchor_of[i].expect("root anchored") {
                Anchor::Existing(id) => Ok(id),
                Anchor::Fresh => e.place_fresh(),
                Anchor::At(v) => e.place(v),
            },
            Some(p) => e.extend_leaf_excluding(map[p], policy, &excluded[i]),
        };
        match step {
            Ok(id) => {
                map[i] = id;
                i += 1;
            }
            Err(err @ (EmbedError::Saturated(_) | EmbedError::NoGoodCandidate { .. })) => {
                // Undo the most recent non-root vertex and try its next candidate.
                let Some(j) = (0..i).rev().find(|&j| shape.parent(j).is_some()) else {
                    return Err(fail(&map, i, backtracks, err));
                };
                if retries[j] >= budget {
                    return Err(fail(&map, i, backtracks, err));
                }
                for k in (j..i).rev() {
                    if shape.parent(k).is_some() {
                        let img = e.image(map[k])?;
                        e.rollback_leaf(map[k])?;
                        if k == j {
                            excluded[j].push(img);
                        }
                    } else if !matches!(anchor_of[k], Some(Anchor::Existing(_))) {
                        e.rollback_leaf(map[k])?;
                    }
                    map[k] = usize::MAX;
                }
                for x in excluded.iter_mut().take(i + 1).skip(j + 1) {
                    x.clear();
                }
                retries[j] += 1;
                backtracks += 1;
                i = j;
            }
            Err(err) => return Err(fail(&map, i, backtracks, err)),
        }
    }
    Ok(map)
}
