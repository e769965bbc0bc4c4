//! Independent checks for crowns and for Hamilton cycles in the square.
//!
//! Nothing here depends on how a crown was produced: inputs are a graph
//! and the serialized artifacts.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::certificate::{Crown, SquareHamiltonCertificate};
use crate::graph::Graph;

/// One violated clause of the crown definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "clause", rename_all = "kebab-case")]
pub enum CrownViolation {
    CycleTooShort { len: usize },
    VertexOutOfRange { vertex: u32 },
    CycleRepeatsVertex { vertex: u32 },
    CycleEdgeMissing { u: u32, v: u32 },
    SpikeNotEdge { u: u32, v: u32 },
    SpikeNotTouchingCycle { u: u32, v: u32 },
    SpikeInsideCycle { u: u32, v: u32 },
    SpikesShareVertex { vertex: u32 },
    SpikeIsCycleEdge { u: u32, v: u32 },
    NotSpanning { covered: usize, n: usize },
    SpikeCount { found: usize, expected: usize },
}

impl CrownViolation {
    pub fn clause(&self) -> &'static str {
        match self {
            Self::CycleTooShort { .. } => "cycle-too-short",
            Self::VertexOutOfRange { .. } => "vertex-out-of-range",
            Self::CycleRepeatsVertex { .. } => "cycle-repeats-vertex",
            Self::CycleEdgeMissing { .. } => "cycle-edge-missing",
            Self::SpikeNotEdge { .. } => "spike-not-edge",
            Self::SpikeNotTouchingCycle { .. } => "spike-not-touching-cycle",
            Self::SpikeInsideCycle { .. } => "spike-inside-cycle",
            Self::SpikesShareVertex { .. } => "spikes-share-vertex",
            Self::SpikeIsCycleEdge { .. } => "spike-is-cycle-edge",
            Self::NotSpanning { .. } => "not-spanning",
            Self::SpikeCount { .. } => "spike-count",
        }
    }
}

impl fmt::Display for CrownViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {self:?}", self.clause())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CrownCheck {
    /// Require `|V(C)| + |M| = n`.
    pub spanning: bool,
    /// Require exactly this many spikes.
    pub spike_count: Option<usize>,
}

impl CrownCheck {
    /// The full statement: spanning with `⌊n/2⌋` spikes.
    pub fn spanning_half(n: usize) -> Self {
        Self {
            spanning: true,
            spike_count: Some(n / 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrownReport {
    pub cycle_len: usize,
    pub spikes: usize,
    pub violations: Vec<CrownViolation>,
}

impl CrownReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_crown(g: &Graph, crown: &Crown, check: CrownCheck) -> CrownReport {
    let n = g.n();
    let mut violations = Vec::new();
    let cycle = &crown.cycle;
    if cycle.len() < 3 {
        violations.push(CrownViolation::CycleTooShort { len: cycle.len() });
    }
    let mut on_cycle = vec![false; n];
    let in_range = |v: u32, violations: &mut Vec<CrownViolation>| {
        let ok = (v as usize) < n;
        if !ok {
            violations.push(CrownViolation::VertexOutOfRange { vertex: v });
        }
        ok
    };
    for &v in cycle {
        if in_range(v, &mut violations) {
            if on_cycle[v as usize] {
                violations.push(CrownViolation::CycleRepeatsVertex { vertex: v });
            }
            on_cycle[v as usize] = true;
        }
    }
    if cycle.len() >= 2 {
        for i in 0..cycle.len() {
            let (u, v) = (cycle[i], cycle[(i + 1) % cycle.len()]);
            if (u as usize) < n && (v as usize) < n && !g.has_edge(u, v) {
                violations.push(CrownViolation::CycleEdgeMissing { u, v });
            }
        }
    }
    let mut spike_end = vec![false; n];
    for &(a, b) in &crown.spikes {
        let a_ok = in_range(a, &mut violations);
        let b_ok = in_range(b, &mut violations);
        if !(a_ok && b_ok) {
            continue;
        }
        if !g.has_edge(a, b) {
            violations.push(CrownViolation::SpikeNotEdge { u: a, v: b });
        }
        match (on_cycle[a as usize], on_cycle[b as usize]) {
            (true, true) => {
                violations.push(CrownViolation::SpikeInsideCycle { u: a, v: b });
                let k = cycle.len();
                let adjacent_on_cycle = (0..k).any(|i| {
                    let (x, y) = (cycle[i], cycle[(i + 1) % k]);
                    (x, y) == (a, b) || (y, x) == (a, b)
                });
                if adjacent_on_cycle {
                    violations.push(CrownViolation::SpikeIsCycleEdge { u: a, v: b });
                }
            }
            (false, false) => violations.push(CrownViolation::SpikeNotTouchingCycle { u: a, v: b }),
            _ => {}
        }
        for w in [a, b] {
            if spike_end[w as usize] {
                violations.push(CrownViolation::SpikesShareVertex { vertex: w });
            }
            spike_end[w as usize] = true;
        }
    }
    let covered = cycle.len() + crown.spikes.len();
    if check.spanning && covered != n {
        violations.push(CrownViolation::NotSpanning { covered, n });
    }
    if let Some(expected) = check.spike_count {
        if crown.spikes.len() != expected {
            violations.push(CrownViolation::SpikeCount {
                found: crown.spikes.len(),
                expected,
            });
        }
    }
    CrownReport {
        cycle_len: cycle.len(),
        spikes: crown.spikes.len(),
        violations,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertifyError {
    #[error("crown covers {covered} vertices, graph has {n}")]
    NotSpanning { covered: usize, n: usize },
    #[error("spike ({0}, {1}) has no endpoint on the cycle")]
    DetachedSpike(u32, u32),
}

/// Walk the cycle and insert each spike partner right after its cycle
/// vertex. Spikes may be given in either orientation.
pub fn square_hamilton_order(crown: &Crown, n: usize) -> Result<SquareHamiltonCertificate, CertifyError> {
    let covered = crown.vertex_count();
    if covered != n {
        return Err(CertifyError::NotSpanning { covered, n });
    }
    let on_cycle: std::collections::HashSet<u32> = crown.cycle.iter().copied().collect();
    let mut partner: HashMap<u32, u32> = HashMap::with_capacity(crown.spikes.len());
    for &(a, b) in &crown.spikes {
        let (c, o) = if on_cycle.contains(&a) {
            (a, b)
        } else if on_cycle.contains(&b) {
            (b, a)
        } else {
            return Err(CertifyError::DetachedSpike(a, b));
        };
        partner.insert(c, o);
    }
    let mut order = Vec::with_capacity(n);
    for &v in &crown.cycle {
        order.push(v);
        if let Some(&u) = partner.get(&v) {
            order.push(u);
        }
    }
    Ok(SquareHamiltonCertificate {
        order,
        source_crown: crown.clone(),
    })
}

/// First reason an order fails to be a Hamilton cycle of the square.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum SquareFailure {
    WrongLength { len: usize, n: usize },
    OutOfRange { vertex: u32 },
    Repeated { vertex: u32 },
    TooFar { position: usize, u: u32, v: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SquareCheck {
    pub ok: bool,
    pub witness: Option<SquareFailure>,
}

/// True iff `order` is a permutation of `V` whose cyclically consecutive
/// pairs are adjacent or share a neighbour in `g`.
pub fn verify_square_hamilton(g: &Graph, order: &[u32]) -> SquareCheck {
    let fail = |w| SquareCheck {
        ok: false,
        witness: Some(w),
    };
    let n = g.n();
    if order.len() != n {
        return fail(SquareFailure::WrongLength { len: order.len(), n });
    }
    let mut seen = vec![false; n];
    for &v in order {
        if v as usize >= n {
            return fail(SquareFailure::OutOfRange { vertex: v });
        }
        if std::mem::replace(&mut seen[v as usize], true) {
            return fail(SquareFailure::Repeated { vertex: v });
        }
    }
    for i in 0..n {
        let (u, v) = (order[i], order[(i + 1) % n]);
        if u != v && !g.has_edge(u, v) && !g.has_common_neighbor(u, v) {
            return fail(SquareFailure::TooFar { position: i, u, v });
        }
    }
    SquareCheck { ok: true, witness: None }
}
