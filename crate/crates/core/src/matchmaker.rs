//! Three small disjoint vertex sets that every vertex sees many times.
//!
//! Colour classes are produced by Moser–Tardos resampling over the events
//! `A(v,i)`: "v has fewer than `threshold` neighbours of colour i". When the
//! resampling stalls, a focused repair restricted to three designated
//! classes finishes the job.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, VertexSet};
use crate::rng::{SeedSource, Stream};

/// How many still-violated events an exhaustion error carries.
const VIOLATION_REPORT_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairPath {
    /// Every event over all `K` classes was cleared by resampling.
    Resampling,
    /// Resampling stalled; the three returned classes were repaired directly.
    Focused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchmakerTriple {
    pub s1: VertexSet,
    pub s2: VertexSet,
    pub s3: VertexSet,
    pub guaranteed_deg: usize,
    pub k: usize,
    pub threshold: usize,
    pub resamples_used: usize,
    pub repair: RepairPath,
}

impl MatchmakerTriple {
    pub fn sets(&self) -> [&VertexSet; 3] {
        [&self.s1, &self.s2, &self.s3]
    }

    pub fn max_size(&self) -> usize {
        self.sets().iter().map(|s| s.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolatedEvent {
    pub vertex: u32,
    pub class: usize,
    pub count: usize,
}

#[derive(Debug, Error)]
pub enum MatchmakerError {
    #[error("delta1 = {0} outside (0, 1/3)")]
    BadDelta1(f64),
    #[error("threshold floor(d/2K) = floor({d}/{}) is zero; d too small", 2 * k)]
    ThresholdZero { d: usize, k: usize },
    #[error("resample budget {budget} exhausted with {} violated events left", violated.len())]
    Exhausted {
        budget: usize,
        violated: Vec<ViolatedEvent>,
    },
    #[error("class sizes {sizes:?} exceed the bound {bound}")]
    SizeBound { sizes: [usize; 3], bound: usize },
}

#[derive(Debug, Clone)]
pub struct MatchmakerOptions {
    pub delta1: f64,
    pub seed: u64,
    pub max_resamples: usize,
    /// Resamples without a new best violation count before switching to the
    /// focused repair. `None` never switches.
    pub stall_window: Option<usize>,
}

impl MatchmakerOptions {
    pub fn new(delta1: f64, seed: u64, n: usize) -> Self {
        Self {
            delta1,
            seed,
            max_resamples: 10 * n,
            stall_window: Some(n / 2),
        }
    }
}

/// Number of colour classes, `⌈2/δ1⌉`.
pub fn color_count(delta1: f64) -> usize {
    (2.0 / delta1 - 1e-9).ceil().max(1.0) as usize
}

/// Smallest degree with a nonzero threshold for this `δ1`.
pub fn min_degree(delta1: f64) -> usize {
    2 * color_count(delta1)
}

struct Coloring<'g> {
    g: &'g Graph,
    k: usize,
    threshold: u32,
    color: Vec<u16>,
    /// `counts[v*k + i]` = neighbours of v with colour i.
    counts: Vec<u32>,
    tracked: Vec<bool>,
    violated: BTreeSet<(u32, u16)>,
}

impl<'g> Coloring<'g> {
    fn new(g: &'g Graph, k: usize, threshold: u32, color: Vec<u16>) -> Self {
        let n = g.n();
        let mut counts = vec![0u32; n * k];
        for v in 0..n {
            for &u in g.neighbors(v as u32) {
                counts[v * k + color[u as usize] as usize] += 1;
            }
        }
        Self {
            g,
            k,
            threshold,
            color,
            counts,
            tracked: vec![true; k],
            violated: BTreeSet::new(),
        }
    }

    fn rebuild_violations(&mut self) {
        self.violated.clear();
        for v in 0..self.g.n() {
            for i in 0..self.k {
                if self.tracked[i] && self.counts[v * self.k + i] < self.threshold {
                    self.violated.insert((v as u32, i as u16));
                }
            }
        }
    }

    fn recolor(&mut self, u: u32, new: u16) {
        let old = self.color[u as usize];
        if old == new {
            return;
        }
        self.color[u as usize] = new;
        let (k, t) = (self.k, self.threshold);
        for &w in self.g.neighbors(u) {
            let base = w as usize * k;
            let c = &mut self.counts[base + old as usize];
            *c -= 1;
            if *c == t - 1 && self.tracked[old as usize] {
                self.violated.insert((w, old));
            }
            let c = &mut self.counts[base + new as usize];
            *c += 1;
            if *c == t && self.tracked[new as usize] {
                self.violated.remove(&(w, new));
            }
        }
    }

    fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &c in &self.color {
            sizes[c as usize] += 1;
        }
        sizes
    }

    fn report(&self) -> Vec<ViolatedEvent> {
        self.violated
            .iter()
            .take(VIOLATION_REPORT_CAP)
            .map(|&(v, i)| ViolatedEvent {
                vertex: v,
                class: i as usize,
                count: self.counts[v as usize * self.k + i as usize] as usize,
            })
            .collect()
    }
}

/// Split `V` into colour classes and return the three smallest.
pub fn split_matchmakers(
    g: &Graph,
    opts: &MatchmakerOptions,
) -> Result<MatchmakerTriple, MatchmakerError> {
    if !(opts.delta1 > 0.0 && opts.delta1 < 1.0 / 3.0) {
        return Err(MatchmakerError::BadDelta1(opts.delta1));
    }
    let n = g.n();
    let k = color_count(opts.delta1);
    let d = g.degree_min();
    let threshold = d / (2 * k);
    if threshold == 0 {
        return Err(MatchmakerError::ThresholdZero { d, k });
    }

    let mut rng = SeedSource::new(opts.seed).stream(Stream::Matchmaker);
    let initial: Vec<u16> = (0..n).map(|_| rng.gen_range(0..k) as u16).collect();
    let mut col = Coloring::new(g, k, threshold as u32, initial);
    col.rebuild_violations();

    let mut resamples = 0usize;
    let mut best = col.violated.len();
    let mut since_best = 0usize;
    let mut stalled = false;
    let mut scratch: Vec<u32> = Vec::new();
    while let Some(&(v, _)) = col.violated.first() {
        if resamples >= opts.max_resamples {
            return Err(MatchmakerError::Exhausted {
                budget: opts.max_resamples,
                violated: col.report(),
            });
        }
        if opts.stall_window.is_some_and(|w| since_best >= w) {
            stalled = true;
            break;
        }
        scratch.clear();
        scratch.push(v);
        scratch.extend_from_slice(g.neighbors(v));
        for &u in &scratch {
            let c = rng.gen_range(0..k) as u16;
            col.recolor(u, c);
        }
        resamples += 1;
        if col.violated.len() < best {
            best = col.violated.len();
            since_best = 0;
        } else {
            since_best += 1;
        }
    }

    let sizes = col.class_sizes();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| (sizes[i], i));
    let chosen = [order[0], order[1], order[2]];

    let repair = if stalled {
        focused_repair(&mut col, chosen, &mut resamples, opts.max_resamples)?;
        RepairPath::Focused
    } else {
        RepairPath::Resampling
    };

    let sizes = col.class_sizes();
    let mut chosen = chosen;
    chosen.sort_by_key(|&i| (sizes[i], i));
    let mut sets = chosen.map(|_| VertexSet::new(n));
    for (v, &c) in col.color.iter().enumerate() {
        if let Some(j) = chosen.iter().position(|&i| i == c as usize) {
            sets[j].insert(v as u32);
        }
    }
    let got = [sets[0].len(), sets[1].len(), sets[2].len()];
    let bound = match repair {
        RepairPath::Resampling => n / (k - 2),
        RepairPath::Focused => (opts.delta1 * n as f64).floor() as usize,
    };
    if got.iter().any(|&s| s > bound) {
        return Err(MatchmakerError::SizeBound { sizes: got, bound });
    }

    let guaranteed_deg = min_degree_into(g, &sets);
    assert!(
        guaranteed_deg >= threshold,
        "matchmaker post-check: achieved {guaranteed_deg} < threshold {threshold}"
    );
    let [s1, s2, s3] = sets;
    Ok(MatchmakerTriple {
        s1,
        s2,
        s3,
        guaranteed_deg,
        k,
        threshold,
        resamples_used: resamples,
        repair,
    })
}

/// Recolour neighbours out of non-designated classes until every vertex
/// reaches the threshold in each designated class.
fn focused_repair(
    col: &mut Coloring<'_>,
    chosen: [usize; 3],
    resamples: &mut usize,
    budget: usize,
) -> Result<(), MatchmakerError> {
    for i in 0..col.k {
        col.tracked[i] = chosen.contains(&i);
    }
    col.rebuild_violations();
    let g = col.g;
    let k = col.k;
    while let Some(&(v, i)) = col.violated.first() {
        if *resamples >= budget {
            return Err(MatchmakerError::Exhausted {
                budget,
                violated: col.report(),
            });
        }
        let mut pick: Option<(usize, u32)> = None;
        for &u in g.neighbors(v) {
            if col.tracked[col.color[u as usize] as usize] {
                continue;
            }
            let gain = g
                .neighbors(u)
                .iter()
                .filter(|&&w| col.counts[w as usize * k + i as usize] < col.threshold)
                .count();
            if pick.is_none_or(|(best, _)| gain > best) {
                pick = Some((gain, u));
            }
        }
        let Some((_, u)) = pick else {
            return Err(MatchmakerError::Exhausted {
                budget,
                violated: col.report(),
            });
        };
        col.recolor(u, i);
        *resamples += 1;
    }
    Ok(())
}

/// `min over v and i of |N(v) ∩ S_i|`.
pub fn min_degree_into(g: &Graph, sets: &[VertexSet]) -> usize {
    sets.par_iter()
        .map(|s| {
            (0..g.n() as u32)
                .into_par_iter()
                .map(|v| g.degree_into(v, s))
                .min()
                .unwrap_or(0)
        })
        .min()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{complete, random_regular};

    fn check(g: &Graph, t: &MatchmakerTriple, delta1: f64) {
        let sets = t.sets();
        for a in 0..3 {
            assert!(sets[a].len() as f64 <= delta1 * g.n() as f64);
            for b in a + 1..3 {
                assert!(sets[a].is_disjoint(sets[b]));
            }
        }
        for v in 0..g.n() as u32 {
            for s in sets {
                let direct = g.neighbors(v).iter().filter(|&&u| s.contains(u)).count();
                assert!(direct >= t.guaranteed_deg);
            }
        }
        assert!(t.guaranteed_deg >= t.threshold);
    }

    #[test]
    fn complete_graph_example() {
        let g = complete(1000);
        let opts = MatchmakerOptions::new(0.048, 7, g.n());
        let t = split_matchmakers(&g, &opts).unwrap();
        assert_eq!(t.k, 42);
        assert_eq!(t.threshold, 11);
        assert!(t.max_size() <= 48);
        check(&g, &t, 0.048);
    }

    #[test]
    fn small_degree_rejected() {
        let g = random_regular(200, 50, 1).unwrap();
        let opts = MatchmakerOptions::new(0.048, 1, g.n());
        assert!(matches!(
            split_matchmakers(&g, &opts),
            Err(MatchmakerError::ThresholdZero { d: 50, k: 42 })
        ));
        assert_eq!(min_degree(0.048), 84);
    }

    #[test]
    fn exhaustion_lists_violations() {
        let g = random_regular(400, 84, 3).unwrap();
        let opts = MatchmakerOptions {
            delta1: 0.048,
            seed: 3,
            max_resamples: 1,
            stall_window: None,
        };
        match split_matchmakers(&g, &opts) {
            Err(MatchmakerError::Exhausted { budget, violated }) => {
                assert_eq!(budget, 1);
                assert!(!violated.is_empty());
                for e in violated {
                    assert!(e.count < 1);
                }
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_and_valid_on_random_regular() {
        let g = random_regular(600, 120, 11).unwrap();
        let opts = MatchmakerOptions::new(0.1, 5, g.n());
        let a = split_matchmakers(&g, &opts).unwrap();
        let b = split_matchmakers(&g, &opts).unwrap();
        assert_eq!(a, b);
        check(&g, &a, 0.1);
    }

    #[test]
    fn bad_delta1() {
        let g = complete(10);
        for d1 in [0.0, 0.5, -1.0] {
            let opts = MatchmakerOptions::new(d1, 0, 10);
            assert!(matches!(
                split_matchmakers(&g, &opts),
                Err(MatchmakerError::BadDelta1(_))
            ));
        }
    }
}
