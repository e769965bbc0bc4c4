//! From an expander to a spanning crown.
//!
//! Stages: matchmakers, the serpent through `S2`, a double broom around
//! it, a second double broom in what is left, an edge pair closing a
//! cycle of length `⌈n/2⌉`, and a bipartite matching for the spikes.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::certificate::{
    CertificateStatus, Crown, FailureInfo, GraphIdentity, PipelineCertificate, RunParameters,
    StageSummary, SCHEMA_VERSION,
};
use crate::certify::{square_hamilton_order, verify_crown, verify_square_hamilton, CrownCheck};
use crate::embedder::{
    binary_forest_index, clean_to_expander, double_broom_index, embed_shape, expanding_check,
    Anchor, CleanOptions, EmbedError, ExpandOptions, PartialEmbedding, Policy, TreeShape,
    DEFAULT_BACKTRACK_BUDGET,
};
use crate::graph::{Graph, VertexSet};
use crate::matching::{hall_violator, hopcroft_karp, Bipartite, HallWitness, Side};
use crate::matchmaker::{split_matchmakers, MatchmakerError, MatchmakerOptions, MatchmakerTriple};
use crate::spectral::{estimate_lambda, lemma2_check, SpectralError, SpectralOptions};

const LEAF_REPORT_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Defaults to `10·n`.
    pub max_resamples: Option<usize>,
    /// Defaults to `n/2`.
    pub stall_window: Option<usize>,
    pub backtracks: usize,
    /// Serpent consumption cap, in units of `δn`.
    pub consumption_factor: f64,
    /// First double broom size cap, in units of `δn`.
    pub broom_factor: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_resamples: None,
            stall_window: None,
            backtracks: DEFAULT_BACKTRACK_BUDGET,
            consumption_factor: 70.0,
            broom_factor: 78.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub delta: f64,
    pub delta1: f64,
    pub seed: u64,
    pub budgets: Budgets,
    pub force: bool,
    pub spectral: SpectralOptions,
    /// Samples for the logged (non-gating) expansion and goodness audits.
    pub audit_samples: usize,
}

impl PipelineConfig {
    /// `δ1 = 48δ`.
    pub fn new(delta: f64, seed: u64) -> Self {
        Self {
            delta,
            delta1: 48.0 * delta,
            seed,
            budgets: Budgets::default(),
            force: false,
            spectral: SpectralOptions {
                seed,
                ..SpectralOptions::default()
            },
            audit_samples: 32,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta > 0.0 && self.delta < self.delta1 && self.delta1 < 1.0) {
            return Err(format!(
                "need 0 < delta < delta1 < 1, got delta = {}, delta1 = {}",
                self.delta, self.delta1
            ));
        }
        let b = &self.budgets;
        if b.backtracks == 0
            || b.consumption_factor <= 0.0
            || b.broom_factor <= 0.0
            || b.max_resamples == Some(0)
        {
            return Err("budgets must be positive".into());
        }
        Ok(())
    }
}

/// A stage failure with machine-readable context.
#[derive(Debug, Clone, Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
    pub diagnostics: Value,
}

impl StageError {
    fn new(stage: &'static str, message: impl Into<String>, diagnostics: Value) -> Self {
        Self {
            stage,
            message: message.into(),
            diagnostics,
        }
    }

    fn embed(stage: &'static str, err: EmbedError) -> Self {
        let diagnostics = match &err {
            EmbedError::TreeFailed {
                placed,
                total,
                backtracks,
                cause,
                ..
            } => json!({
                "placed": placed,
                "total": total,
                "backtracks": backtracks,
                "cause": cause.to_string(),
                "saturation": match cause.as_ref() {
                    EmbedError::Saturated(s) => serde_json::to_value(s).unwrap_or(Value::Null),
                    _ => Value::Null,
                },
            }),
            EmbedError::Saturated(s) => serde_json::to_value(s).unwrap_or(Value::Null),
            _ => Value::Null,
        };
        Self::new(stage, err.to_string(), diagnostics)
    }
}

/// `t_i = min{t : ⌊i/2⌋·2^t ≥ δn}`.
pub fn merge_depth(i: usize, delta_n: f64) -> usize {
    assert!(i >= 2, "merging needs at least two paths");
    let half = (i / 2) as f64;
    let mut t = 0;
    while half * ((1u64 << t) as f64) < delta_n {
        t += 1;
    }
    t
}

/// Smallest `t` with `2^t ≥ δn`.
pub fn brush_depth(delta_n: f64) -> usize {
    let mut t = 0;
    while ((1u64 << t) as f64) < delta_n {
        t += 1;
    }
    t
}

/// Vertices of a complete binary tree of depth `t`, minus the root.
pub fn brush_size(t: usize) -> usize {
    (1usize << (t + 1)) - 2
}

/// Vertices of `T_{ℓ,t}`.
pub fn double_broom_size(ell: usize, t: usize) -> usize {
    ell + 1 + 2 * brush_size(t)
}

/// `ℓ2 = ⌈n/2⌉ − ℓ1 − 4t − 2`.
pub fn second_path_length(n: usize, ell1: usize, t: usize) -> i64 {
    n.div_ceil(2) as i64 - ell1 as i64 - 4 * t as i64 - 2
}

/// The serpent: a path through all of `S2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Serpent {
    pub path: Vec<u32>,
    /// Path edges that are not forest edges, as `(min, max)`.
    pub deleted_edges: Vec<(u32, u32)>,
    pub s2: usize,
    pub merges: usize,
    /// Largest forest size reached while trees were grown.
    pub peak_forest: usize,
    /// Tree vertices embedded over all merges (before rollback).
    pub embedded_total: usize,
}

impl Serpent {
    pub fn a1(&self) -> u32 {
        self.path[0]
    }

    pub fn b1(&self) -> u32 {
        *self.path.last().expect("serpent is non-empty")
    }

    pub fn length(&self) -> usize {
        self.path.len() - 1
    }
}

/// Serpent parameters.
#[derive(Debug, Clone)]
pub struct SerpentParams {
    pub delta: f64,
    pub scale: usize,
    pub size_limit: usize,
    pub consumption_cap: usize,
    pub backtracks: usize,
}

fn key(u: u32, v: u32) -> (u32, u32) {
    (u.min(v), u.max(v))
}

/// First host edge from `a` to `b`, scanning the smaller side in order.
/// Returns `(x, y)` with `x ∈ a` and `y ∈ b`.
fn find_edge(g: &Graph, a: &[u32], b: &[u32], mark: &mut [bool]) -> Option<(u32, u32)> {
    let (small, large, flipped) = if a.len() <= b.len() {
        (a, b, false)
    } else {
        (b, a, true)
    };
    for &v in large {
        mark[v as usize] = true;
    }
    let mut hit = None;
    'scan: for &u in small {
        for &w in g.neighbors(u) {
            if mark[w as usize] {
                hit = Some((u, w));
                break 'scan;
            }
        }
    }
    for &v in large {
        mark[v as usize] = false;
    }
    hit.map(|(u, w)| if flipped { (w, u) } else { (u, w) })
}

fn sample_list(v: &[u32]) -> Value {
    json!({
        "size": v.len(),
        "vertices": &v[..v.len().min(LEAF_REPORT_CAP)],
    })
}

fn check_serpent_state(
    e: &PartialEmbedding<'_>,
    paths: &[Vec<u32>],
    s2: &VertexSet,
    deleted: &HashSet<(u32, u32)>,
    stamp: &mut [u32],
    round: u32,
) -> Result<(), String> {
    let g = e.host();
    let mut total = 0;
    let mut covered = 0;
    let mut path_edges = 0;
    for p in paths {
        let (first, last) = (p[0], *p.last().expect("non-empty"));
        if !s2.contains(first) || !s2.contains(last) {
            return Err(format!("path endpoint outside S2: {first}..{last}"));
        }
        for (k, &v) in p.iter().enumerate() {
            if stamp[v as usize] == round {
                return Err(format!("vertex {v} on two paths"));
            }
            stamp[v as usize] = round;
            total += 1;
            covered += s2.contains(v) as usize;
            if k > 0 {
                let u = p[k - 1];
                path_edges += 1;
                if !g.has_edge(u, v) {
                    return Err(format!("path step {u}-{v} not a host edge"));
                }
                let in_forest = match (e.node_at(u), e.node_at(v)) {
                    (Some(a), Some(b)) => e
                        .forest_neighbors(a)
                        .map(|nb| nb.contains(&b))
                        .unwrap_or(false),
                    _ => false,
                };
                if in_forest == deleted.contains(&key(u, v)) {
                    return Err(format!("edge {u}-{v} must be in exactly one of forest and E"));
                }
            }
        }
    }
    if covered != s2.len() {
        return Err(format!("paths cover {covered} of {} S2 vertices", s2.len()));
    }
    if e.len() != total {
        return Err(format!("forest has {} vertices, paths {}", e.len(), total));
    }
    if deleted.len() != s2.len() - paths.len() {
        return Err(format!(
            "|E| = {} but s2 - i = {}",
            deleted.len(),
            s2.len() - paths.len()
        ));
    }
    if e.image_edges().len() != path_edges - deleted.len() {
        return Err("forest has edges outside the paths".into());
    }
    Ok(())
}

/// Merge the vertices of `S2` into one path inside `V1`, keeping
/// the path minus the deleted edges embedded as a forest.
pub fn build_serpent<'g>(
    g: &'g Graph,
    v1: &VertexSet,
    s2: &VertexSet,
    params: &SerpentParams,
) -> Result<(Serpent, PartialEmbedding<'g>), StageError> {
    const STAGE: &str = "serpent";
    let n = g.n();
    let delta_n = params.delta * n as f64;
    let (mut e, _) = PartialEmbedding::init(g, v1.clone(), s2, params.scale, 3)
        .map_err(|err| StageError::embed(STAGE, err))?;
    e.set_size_limit(params.size_limit);

    let mut paths: Vec<Vec<u32>> = s2.iter().map(|v| vec![v]).collect();
    let mut deleted: HashSet<(u32, u32)> = HashSet::new();
    let mut deleted_order: Vec<(u32, u32)> = Vec::new();
    let mut peak = e.len();
    let mut embedded_total = 0;
    let mut stamp = vec![0u32; n];
    let mut mark = vec![false; n];
    let mut round = 0u32;
    if paths.is_empty() {
        return Err(StageError::new(STAGE, "S2 is empty", Value::Null));
    }

    while paths.len() > 1 {
        let i = paths.len();
        let t = merge_depth(i, delta_n);
        let grown = i * brush_size(t);
        let predicted = e.len() + grown;
        if predicted > params.consumption_cap {
            return Err(StageError::new(
                STAGE,
                format!(
                    "forest would reach {predicted} vertices, above the consumption cap {}",
                    params.consumption_cap
                ),
                json!({ "i": i, "t_i": t, "forest": e.len(), "cap": params.consumption_cap }),
            ));
        }

        // One endpoint per path, lowest id; first ⌈i/2⌉ form X_{i1}.
        let roots: Vec<u32> = paths
            .iter()
            .map(|p| p[0].min(*p.last().expect("non-empty")))
            .collect();
        let first_half = i.div_ceil(2);
        let anchors: Vec<Anchor> = roots
            .iter()
            .map(|&x| Anchor::Existing(e.node_at(x).expect("path vertices are embedded")))
            .collect();
        let shape = TreeShape::binary_forest(i, t);
        let map = embed_shape(&mut e, &shape, &anchors, Policy::default(), params.backtracks)
            .map_err(|err| {
                let mut se = StageError::embed(STAGE, err);
                se.diagnostics["i"] = json!(i);
                se.diagnostics["t_i"] = json!(t);
                se
            })?;
        embedded_total += grown;
        peak = peak.max(e.len());
        if e.len() > params.consumption_cap {
            return Err(StageError::new(
                STAGE,
                "consumption cap breached after growth",
                json!({ "forest": e.len(), "cap": params.consumption_cap }),
            ));
        }

        let leaf_first = (1usize << t) - 1;
        let leaves_of = |j: usize| -> Vec<usize> {
            (leaf_first..leaf_first + (1 << t))
                .map(|k| binary_forest_index(i, j, k))
                .collect()
        };
        let images = |idx: &[usize]| -> Vec<u32> {
            idx.iter()
                .map(|&s| e.image(map[s]).expect("grown vertex alive"))
                .collect()
        };
        let left_idx: Vec<usize> = (0..first_half).flat_map(leaves_of).collect();
        let right_idx: Vec<usize> = (first_half..i).flat_map(leaves_of).collect();
        let left = images(&left_idx);
        let right = images(&right_idx);
        let Some((x, y)) = find_edge(g, &left, &right, &mut mark) else {
            return Err(StageError::new(
                STAGE,
                "no host edge between the two leaf sets",
                json!({ "i": i, "t_i": t, "left": sample_list(&left), "right": sample_list(&right) }),
            ));
        };
        let lx = left_idx[left.iter().position(|&v| v == x).expect("x in left")];
        let ry = right_idx[right.iter().position(|&v| v == y).expect("y in right")];

        // Keep the two root paths, roll back every other grown vertex.
        let up_left = shape.path_to_root(lx);
        let up_right = shape.path_to_root(ry);
        let keep: HashSet<usize> = up_left.iter().chain(&up_right).copied().collect();
        for s in (0..shape.len()).rev() {
            if shape.parent(s).is_some() && !keep.contains(&s) {
                e.rollback_leaf(map[s])
                    .map_err(|err| StageError::embed(STAGE, err))?;
            }
        }
        let root_a = *up_left.last().expect("root");
        let root_b = *up_right.last().expect("root");
        let (xa, xb) = (roots[root_a], roots[root_b]);
        let img = |v: &[usize]| -> Vec<u32> { v.iter().map(|&s| e.image(map[s]).expect("kept")).collect() };
        // x_a ... x, then y ... x_b.
        let mut bridge: Vec<u32> = img(&up_left);
        bridge.reverse();
        bridge.extend(img(&up_right));

        let mut a = std::mem::take(&mut paths[root_a]);
        if a[0] == xa && a.len() > 1 {
            a.reverse();
        }
        let mut b = std::mem::take(&mut paths[root_b]);
        if *b.last().expect("non-empty") == xb && b.len() > 1 {
            b.reverse();
        }
        debug_assert_eq!(*a.last().unwrap(), xa);
        debug_assert_eq!(b[0], xb);
        a.extend_from_slice(&bridge[1..bridge.len() - 1]);
        a.extend_from_slice(&b);
        paths[root_a] = a;
        paths.remove(root_b);
        deleted.insert(key(x, y));
        deleted_order.push(key(x, y));

        round += 1;
        check_serpent_state(&e, &paths, s2, &deleted, &mut stamp, round)
            .map_err(|msg| StageError::new(STAGE, msg, json!({ "i": i })))?;
    }

    let path = paths.pop().expect("one path left");
    if path.len() > params.consumption_cap {
        return Err(StageError::new(
            STAGE,
            "serpent longer than the consumption cap",
            json!({ "vertices": path.len(), "cap": params.consumption_cap }),
        ));
    }
    Ok((
        Serpent {
            path,
            deleted_edges: deleted_order,
            s2: s2.len(),
            merges: s2.len() - 1,
            peak_forest: peak,
            embedded_total,
        },
        e,
    ))
}

/// A path with complete binary trees of depth `depth` at both ends. Trees
/// are stored in heap order (children of `k` at `2k+1`, `2k+2`); `left[0]`
/// and `right[0]` are the path ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoubleBroom {
    pub path: Vec<u32>,
    pub depth: usize,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
}

impl DoubleBroom {
    pub fn ell(&self) -> usize {
        self.path.len() - 1
    }

    fn leaf_start(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn left_leaves(&self) -> &[u32] {
        &self.left[self.leaf_start()..]
    }

    pub fn right_leaves(&self) -> &[u32] {
        &self.right[self.leaf_start()..]
    }

    pub fn vertex_count(&self) -> usize {
        double_broom_size(self.ell(), self.depth)
    }

    pub fn vertices(&self) -> Vec<u32> {
        let mut v = self.path.clone();
        v.extend_from_slice(&self.left[1..]);
        v.extend_from_slice(&self.right[1..]);
        v
    }

    fn climb(tree: &[u32], mut k: usize) -> Vec<u32> {
        let mut out = vec![tree[k]];
        while k > 0 {
            k = (k - 1) / 2;
            out.push(tree[k]);
        }
        out
    }

    /// Path inside the broom from left leaf `li` to right leaf `ri` (indices
    /// into the leaf slices). Always `ℓ + 2t` edges.
    pub fn path_between(&self, li: usize, ri: usize) -> Vec<u32> {
        let s = self.leaf_start();
        let mut out = Self::climb(&self.left, s + li);
        out.extend_from_slice(&self.path[1..]);
        let mut down = Self::climb(&self.right, s + ri);
        down.reverse();
        out.extend_from_slice(&down[1..]);
        out
    }

    /// Structural check against the host.
    pub fn verify(&self, g: &Graph) -> Result<(), String> {
        let size = (1usize << (self.depth + 1)) - 1;
        if self.path.is_empty() || self.left.len() != size || self.right.len() != size {
            return Err("broom arrays have the wrong sizes".into());
        }
        if self.left[0] != self.path[0] || self.right[0] != *self.path.last().unwrap() {
            return Err("brush roots are not the path ends".into());
        }
        let verts = self.vertices();
        let distinct: HashSet<u32> = verts.iter().copied().collect();
        if distinct.len() != verts.len() || verts.len() != self.vertex_count() {
            return Err("broom vertices are not distinct".into());
        }
        for w in self.path.windows(2) {
            if !g.has_edge(w[0], w[1]) {
                return Err(format!("path edge {}-{} missing", w[0], w[1]));
            }
        }
        for tree in [&self.left, &self.right] {
            for k in 1..tree.len() {
                if !g.has_edge(tree[k], tree[(k - 1) / 2]) {
                    return Err(format!("brush edge {}-{} missing", tree[k], tree[(k - 1) / 2]));
                }
            }
        }
        Ok(())
    }
}

/// Hang depth-`t` trees from both serpent ends.
pub fn grow_double_broom(
    e: &mut PartialEmbedding<'_>,
    serpent: &Serpent,
    t: usize,
    broom_cap: usize,
    backtracks: usize,
) -> Result<DoubleBroom, StageError> {
    const STAGE: &str = "first-broom";
    let size = double_broom_size(serpent.length(), t);
    if size > broom_cap {
        return Err(StageError::new(
            STAGE,
            format!("double broom would have {size} vertices, above the cap {broom_cap}"),
            json!({ "ell1": serpent.length(), "t": t, "cap": broom_cap }),
        ));
    }
    if serpent.length() == 0 && t > 0 {
        return Err(StageError::new(
            STAGE,
            "serpent is a single vertex; both brushes would share a root of degree 4",
            Value::Null,
        ));
    }
    let anchors: Vec<Anchor> = [serpent.a1(), serpent.b1()]
        .iter()
        .map(|&v| Anchor::Existing(e.node_at(v).expect("serpent is embedded")))
        .collect();
    let anchors = if serpent.length() == 0 { &anchors[..1] } else { &anchors[..] };
    let roots = anchors.len();
    let shape = TreeShape::binary_forest(roots, t);
    e.set_size_limit(e.size_limit().max(e.len() + shape.len()));
    let map = embed_shape(e, &shape, anchors, Policy::default(), backtracks)
        .map_err(|err| StageError::embed(STAGE, err))?;
    let heap = |j: usize| -> Vec<u32> {
        (0..(1usize << (t + 1)) - 1)
            .map(|k| e.image(map[binary_forest_index(roots, j, k)]).expect("alive"))
            .collect()
    };
    let left = heap(0);
    let right = if roots == 2 { heap(1) } else { left.clone() };
    let broom = DoubleBroom {
        path: serpent.path.clone(),
        depth: t,
        left,
        right,
    };
    if broom.vertex_count() > broom_cap {
        return Err(StageError::new(
            STAGE,
            "broom cap breached",
            json!({ "size": broom.vertex_count(), "cap": broom_cap }),
        ));
    }
    broom
        .verify(e.host())
        .map_err(|m| StageError::new(STAGE, m, Value::Null))?;
    Ok(broom)
}

/// Embed `T_{ℓ2,t}` inside `U0`.
pub fn embed_second_broom(
    g: &Graph,
    u0: &VertexSet,
    ell2: i64,
    t: usize,
    backtracks: usize,
) -> Result<DoubleBroom, StageError> {
    const STAGE: &str = "second-broom";
    if ell2 < 1 {
        return Err(StageError::new(
            STAGE,
            format!("infeasible path length l2 = {ell2}"),
            json!({ "ell2": ell2, "t": t }),
        ));
    }
    let ell2 = ell2 as usize;
    let size = double_broom_size(ell2, t);
    if size > u0.len() {
        return Err(StageError::new(
            STAGE,
            format!("T(l2, t) needs {size} vertices but U0 has {}", u0.len()),
            json!({ "ell2": ell2, "t": t, "needed": size, "available": u0.len() }),
        ));
    }
    let mut e = PartialEmbedding::new(g, u0.clone(), u0.len(), 3).with_size_limit(u0.len());
    let shape = TreeShape::double_broom(ell2, t);
    let map = embed_shape(&mut e, &shape, &[Anchor::Fresh], Policy::default(), backtracks)
        .map_err(|err| StageError::embed(STAGE, err))?;
    let img = |s: usize| e.image(map[s]).expect("alive");
    let heap = |j: usize| -> Vec<u32> {
        (0..(1usize << (t + 1)) - 1)
            .map(|k| img(double_broom_index(ell2, j, k)))
            .collect()
    };
    let broom = DoubleBroom {
        path: (0..=ell2).map(img).collect(),
        depth: t,
        left: heap(0),
        right: heap(1),
    };
    broom
        .verify(g)
        .map_err(|m| StageError::new(STAGE, m, Value::Null))?;
    Ok(broom)
}

/// Join the brooms by edges `f1 ∈ L11×L21` and `f2 ∈ L12×L22`.
/// Returns the cycle and the two edges.
pub fn close_cycle(
    g: &Graph,
    t1: &DoubleBroom,
    t2: &DoubleBroom,
) -> Result<(Vec<u32>, (u32, u32), (u32, u32)), StageError> {
    const STAGE: &str = "cycle";
    let mut mark = vec![false; g.n()];
    let missing = |which: &str, a: &[u32], b: &[u32]| {
        StageError::new(
            STAGE,
            format!("no host edge for {which}"),
            json!({ "from": sample_list(a), "to": sample_list(b) }),
        )
    };
    let f1 = find_edge(g, t1.left_leaves(), t2.left_leaves(), &mut mark)
        .ok_or_else(|| missing("f1", t1.left_leaves(), t2.left_leaves()))?;
    let f2 = find_edge(g, t1.right_leaves(), t2.right_leaves(), &mut mark)
        .ok_or_else(|| missing("f2", t1.right_leaves(), t2.right_leaves()))?;
    let pos = |leaves: &[u32], v: u32| leaves.iter().position(|&x| x == v).expect("leaf");
    let mut cycle = t1.path_between(pos(t1.left_leaves(), f1.0), pos(t1.right_leaves(), f2.0));
    let mut back = t2.path_between(pos(t2.left_leaves(), f1.1), pos(t2.right_leaves(), f2.1));
    back.reverse();
    cycle.extend(back);
    Ok((cycle, f1, f2))
}

/// A maximum matching short of its target, with a Hall violator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeDeficit {
    pub matched: usize,
    pub target: usize,
    pub witness: Option<HallWitness>,
}

/// Maximum matching between the cycle and the rest; succeeds when
/// it reaches `target`. Spikes come out in cycle order.
pub fn spike_matching(
    g: &Graph,
    cycle: &[u32],
    target: usize,
) -> Result<Vec<(u32, u32)>, SpikeDeficit> {
    let n = g.n();
    let mut slot = vec![u32::MAX; n];
    for (i, &c) in cycle.iter().enumerate() {
        slot[c as usize] = i as u32;
    }
    let outside: Vec<u32> = (0..n as u32).filter(|&v| slot[v as usize] == u32::MAX).collect();
    let mut right_of = vec![u32::MAX; n];
    for (j, &v) in outside.iter().enumerate() {
        right_of[v as usize] = j as u32;
    }
    let mut b = Bipartite::new(cycle.len(), outside.len());
    for (i, &c) in cycle.iter().enumerate() {
        for &w in g.neighbors(c) {
            if right_of[w as usize] != u32::MAX {
                b.add_edge(i as u32, right_of[w as usize]);
            }
        }
    }
    let m = hopcroft_karp(&b);
    if m.size() < target {
        // Prefer the smaller side; fall back to the other when it is saturated.
        let sides = if outside.len() <= cycle.len() {
            [Side::Right, Side::Left]
        } else {
            [Side::Left, Side::Right]
        };
        let witness = sides
            .iter()
            .find_map(|&side| hall_violator(&b, &m, side))
            .map(|mut w| {
                let (xs, ns) = match w.side {
                    Side::Left => (cycle, &outside[..]),
                    Side::Right => (&outside[..], cycle),
                };
                w.set.iter_mut().for_each(|v| *v = xs[*v as usize]);
                w.neighbourhood.iter_mut().for_each(|v| *v = ns[*v as usize]);
                w
            });
        return Err(SpikeDeficit {
            matched: m.size(),
            target,
            witness,
        });
    }
    Ok(m
        .pairs()
        .into_iter()
        .map(|(l, r)| (cycle[l as usize], outside[r as usize]))
        .collect())
}

#[derive(Debug)]
pub struct PipelineRun {
    pub certificate: PipelineCertificate,
    pub crown: Crown,
    pub timings: Vec<(String, Duration)>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("lambda/d = {ratio:.6} exceeds delta = {delta} (lambda = {lambda:.6}, d = {d}); use force to override")]
    Refused {
        lambda: f64,
        d: usize,
        ratio: f64,
        delta: f64,
    },
    #[error("stage {}: {}", .failure.stage, .failure.message)]
    Stage {
        failure: StageError,
        certificate: Box<PipelineCertificate>,
        timings: Vec<(String, Duration)>,
    },
}

struct Recorder {
    cert: PipelineCertificate,
    timings: Vec<(String, Duration)>,
    clock: Instant,
}

impl Recorder {
    fn summary(&mut self, stage: &str, details: Value) {
        let details: BTreeMap<String, Value> = match details {
            Value::Object(map) => map.into_iter().collect(),
            other => BTreeMap::from([("value".to_string(), other)]),
        };
        self.cert.stages.push(StageSummary {
            stage: stage.to_string(),
            details,
        });
        let now = Instant::now();
        self.timings.push((stage.to_string(), now - self.clock));
        log::info!("stage {stage} done in {:?}", now - self.clock);
        self.clock = now;
    }

    fn fail(mut self, failure: StageError) -> PipelineError {
        log::warn!("stage {} failed: {}", failure.stage, failure.message);
        self.cert.status = CertificateStatus::Failed;
        self.cert.failure = Some(FailureInfo {
            stage: failure.stage.to_string(),
            message: failure.message.clone(),
            diagnostics: failure.diagnostics.clone(),
        });
        self.timings
            .push((failure.stage.to_string(), self.clock.elapsed()));
        PipelineError::Stage {
            failure,
            certificate: Box::new(self.cert),
            timings: self.timings,
        }
    }
}

fn matchmaker_stage(
    g: &Graph,
    cfg: &PipelineConfig,
) -> Result<MatchmakerTriple, StageError> {
    let n = g.n();
    let opts = MatchmakerOptions {
        delta1: cfg.delta1,
        seed: cfg.seed,
        max_resamples: cfg.budgets.max_resamples.unwrap_or(10 * n),
        stall_window: Some(cfg.budgets.stall_window.unwrap_or(n / 2)),
    };
    split_matchmakers(g, &opts).map_err(|err| {
        let diagnostics = match &err {
            MatchmakerError::Exhausted { violated, .. } => json!({ "violated": violated }),
            MatchmakerError::SizeBound { sizes, bound } => json!({ "sizes": sizes, "bound": bound }),
            MatchmakerError::ThresholdZero { d, k } => json!({ "d": d, "k": k }),
            MatchmakerError::BadDelta1(d1) => json!({ "delta1": d1 }),
        };
        StageError::new("matchmakers", err.to_string(), diagnostics)
    })
}

/// Run every stage on `g` and return a verified crown with its certificate.
pub fn run_pipeline(g: &Graph, cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let n = g.n();
    let delta_n = cfg.delta * n as f64;
    let clock = Instant::now();

    let spectral = estimate_lambda(g, &cfg.spectral)?;
    let ratio = spectral.ratio();
    if ratio > cfg.delta && !cfg.force {
        return Err(PipelineError::Refused {
            lambda: spectral.lambda_est,
            d: spectral.d,
            ratio,
            delta: cfg.delta,
        });
    }
    let mut rec = Recorder {
        cert: PipelineCertificate {
            schema_version: SCHEMA_VERSION,
            status: CertificateStatus::Failed,
            graph: GraphIdentity::of(g),
            parameters: Some(RunParameters {
                seed: cfg.seed,
                delta: cfg.delta,
                delta1: cfg.delta1,
                forced: cfg.force,
            }),
            spectral: Some(spectral.clone()),
            stages: Vec::new(),
            crown: None,
            square_hamilton_order: None,
            failure: None,
        },
        timings: Vec::new(),
        clock,
    };
    rec.summary(
        "spectral-gate",
        json!({ "ratio": ratio, "delta": cfg.delta, "passed": ratio <= cfg.delta, "forced": cfg.force }),
    );

    // Matchmakers.
    let mm = match matchmaker_stage(g, cfg) {
        Ok(mm) => mm,
        Err(e) => return Err(rec.fail(e)),
    };
    let lemma2 = {
        let probe = VertexSet::from_vertices(n, mm.s2.iter().take(delta_n as usize));
        match lemma2_check(g, &mm.s3, mm.guaranteed_deg, &probe, cfg.delta) {
            Ok(b) => json!(b),
            Err(e) => json!(format!("precondition not met: {e}")),
        }
    };
    rec.summary(
        "matchmakers",
        json!({
            "k": mm.k,
            "threshold": mm.threshold,
            "guaranteed_deg": mm.guaranteed_deg,
            "sizes": [mm.s1.len(), mm.s2.len(), mm.s3.len()],
            "size_bound": (cfg.delta1 * n as f64).floor(),
            "resamples_used": mm.resamples_used,
            "repair": mm.repair,
            "s3_expansion_check": lemma2,
        }),
    );

    // Serpent.
    let v1 = mm.s1.complement();
    let scale = ((1.0 - cfg.delta) * n as f64 / 6.0).floor() as usize;
    let consumption_cap = (cfg.budgets.consumption_factor * delta_n).floor() as usize;
    let params = SerpentParams {
        delta: cfg.delta,
        scale,
        size_limit: (scale / 2 + 1).max(consumption_cap).min(v1.len()),
        consumption_cap,
        backtracks: cfg.budgets.backtracks,
    };
    let v1_audit = expanding_check(
        g,
        &v1,
        scale,
        5.0,
        &ExpandOptions {
            max_subsets: 0,
            samples: cfg.audit_samples,
            seed: cfg.seed,
        },
    );
    let (serpent, mut forest) = match build_serpent(g, &v1, &mm.s2, &params) {
        Ok(x) => x,
        Err(e) => return Err(rec.fail(e)),
    };
    let goodness = forest.goodness_sampled(cfg.audit_samples, 64, cfg.seed);
    rec.summary(
        "serpent",
        json!({
            "s2": serpent.s2,
            "merges": serpent.merges,
            "ell1": serpent.length(),
            "deleted_edges": serpent.deleted_edges.len(),
            "peak_forest": serpent.peak_forest,
            "embedded_total": serpent.embedded_total,
            "consumption_cap": consumption_cap,
            "scale": scale,
            "size_limit": params.size_limit,
            "v1_expansion_sampled": v1_audit.holds,
            "goodness_sampled": goodness.good,
        }),
    );

    // First double broom.
    let t = brush_depth(delta_n);
    let broom_cap = (cfg.budgets.broom_factor * delta_n).floor() as usize;
    let t1 = match grow_double_broom(&mut forest, &serpent, t, broom_cap, cfg.budgets.backtracks) {
        Ok(b) => b,
        Err(e) => return Err(rec.fail(e)),
    };
    drop(forest);
    rec.summary(
        "first-broom",
        json!({ "t": t, "vertices": t1.vertex_count(), "cap": broom_cap, "leaves_per_side": 1usize << t }),
    );

    // Second double broom.
    let used1 = VertexSet::from_vertices(n, t1.vertices());
    let u = v1.difference(&used1);
    let clean = match clean_to_expander(g, &u, cfg.delta, &CleanOptions::default()) {
        Ok(c) => c,
        Err(e) => {
            return Err(rec.fail(StageError::new(
                "second-broom",
                e.to_string(),
                json!({ "u": u.len() }),
            )))
        }
    };
    let ell2 = second_path_length(n, serpent.length(), t);
    let t2 = match embed_second_broom(g, &clean.kept, ell2, t, cfg.budgets.backtracks) {
        Ok(b) => b,
        Err(mut e) => {
            e.diagnostics["u"] = json!(u.len());
            e.diagnostics["u0"] = json!(clean.kept.len());
            return Err(rec.fail(e));
        }
    };
    rec.summary(
        "second-broom",
        json!({
            "u": u.len(),
            "u0": clean.kept.len(),
            "removed": clean.removed.len(),
            "clean_rounds": clean.rounds,
            "clean_threshold": clean.threshold,
            "clean_hypothesis_met": clean.hypothesis_met,
            "ell2": ell2,
            "vertices": t2.vertex_count(),
        }),
    );

    // Cycle.
    let (cycle, f1, f2) = match close_cycle(g, &t1, &t2) {
        Ok(x) => x,
        Err(e) => return Err(rec.fail(e)),
    };
    let on_cycle = VertexSet::from_vertices(n, cycle.iter().copied());
    let cycle_ok = cycle.len() == n.div_ceil(2)
        && on_cycle.len() == cycle.len()
        && mm.s2.is_subset(&on_cycle)
        && on_cycle.is_disjoint(&mm.s1)
        && (0..cycle.len()).all(|i| g.has_edge(cycle[i], cycle[(i + 1) % cycle.len()]));
    if !cycle_ok {
        return Err(rec.fail(StageError::new(
            "cycle",
            "closed cycle failed re-verification",
            json!({ "length": cycle.len(), "expected": n.div_ceil(2) }),
        )));
    }
    rec.summary(
        "cycle",
        json!({ "length": cycle.len(), "f1": [f1.0, f1.1], "f2": [f2.0, f2.1] }),
    );

    // Spikes.
    let spikes = match spike_matching(g, &cycle, n / 2) {
        Ok(s) => s,
        Err(d) => {
            return Err(rec.fail(StageError::new(
                "spikes",
                format!("maximum matching {} short of {}", d.matched, d.target),
                serde_json::to_value(&d).unwrap_or(Value::Null),
            )))
        }
    };
    rec.summary("spikes", json!({ "matched": spikes.len(), "target": n / 2 }));

    let crown = Crown { cycle, spikes };
    let report = verify_crown(g, &crown, CrownCheck::spanning_half(n));
    if !report.is_valid() {
        return Err(rec.fail(StageError::new(
            "verify",
            "crown failed verification",
            serde_json::to_value(&report).unwrap_or(Value::Null),
        )));
    }
    let square = match square_hamilton_order(&crown, n) {
        Ok(s) => s,
        Err(e) => return Err(rec.fail(StageError::new("verify", e.to_string(), Value::Null))),
    };
    let check = verify_square_hamilton(g, &square.order);
    if !check.ok {
        return Err(rec.fail(StageError::new(
            "verify",
            "square-Hamilton order failed verification",
            json!(format!("{:?}", check.witness)),
        )));
    }
    rec.summary("verify", json!({ "crown_valid": true, "square_hamilton_valid": true }));

    rec.cert.status = CertificateStatus::Complete;
    rec.cert.crown = Some(crown.clone());
    rec.cert.square_hamilton_order = Some(square.order);
    Ok(PipelineRun {
        certificate: rec.cert,
        crown,
        timings: rec.timings,
    })
}
