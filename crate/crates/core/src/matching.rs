//! Maximum bipartite matching (Hopcroft–Karp) with Hall-violator
//! extraction for deficient instances.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

const UNMATCHED: u32 = u32::MAX;
const INF: u32 = u32::MAX;

/// Bipartite graph with left vertices `0..left`, right vertices
/// `0..right`, and adjacency from the left.
#[derive(Debug, Clone)]
pub struct Bipartite {
    right: usize,
    adj: Vec<Vec<u32>>,
}

impl Bipartite {
    pub fn new(left: usize, right: usize) -> Self {
        Self {
            right,
            adj: vec![Vec::new(); left],
        }
    }

    pub fn from_edges(left: usize, right: usize, edges: &[(u32, u32)]) -> Self {
        let mut b = Self::new(left, right);
        for &(l, r) in edges {
            b.add_edge(l, r);
        }
        b
    }

    pub fn add_edge(&mut self, l: u32, r: u32) {
        assert!((r as usize) < self.right, "right vertex {r} out of range");
        self.adj[l as usize].push(r);
    }

    pub fn left(&self) -> usize {
        self.adj.len()
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn neighbors(&self, l: u32) -> &[u32] {
        &self.adj[l as usize]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::new(self.right, self.left());
        for (l, rs) in self.adj.iter().enumerate() {
            for &r in rs {
                t.adj[r as usize].push(l as u32);
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    mate_left: Vec<u32>,
    mate_right: Vec<u32>,
    size: usize,
}

impl Matching {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mate_of_left(&self, l: u32) -> Option<u32> {
        let m = self.mate_left[l as usize];
        (m != UNMATCHED).then_some(m)
    }

    pub fn mate_of_right(&self, r: u32) -> Option<u32> {
        let m = self.mate_right[r as usize];
        (m != UNMATCHED).then_some(m)
    }

    /// Matched pairs `(left, right)` in left order.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.mate_left
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != UNMATCHED)
            .map(|(l, &r)| (l as u32, r))
            .collect()
    }

    fn swapped(&self) -> Self {
        Self {
            mate_left: self.mate_right.clone(),
            mate_right: self.mate_left.clone(),
            size: self.size,
        }
    }
}

pub fn hopcroft_karp(b: &Bipartite) -> Matching {
    let (nl, nr) = (b.left(), b.right());
    let mut mate_left = vec![UNMATCHED; nl];
    let mut mate_right = vec![UNMATCHED; nr];
    let mut dist = vec![INF; nl];
    let mut size = 0;
    let mut queue = VecDeque::new();
    let mut next_edge = vec![0usize; nl];
    let mut stack: Vec<u32> = Vec::new();

    loop {
        // Layer the free left vertices and everything reachable by
        // alternating paths.
        queue.clear();
        for l in 0..nl {
            if mate_left[l] == UNMATCHED {
                dist[l] = 0;
                queue.push_back(l as u32);
            } else {
                dist[l] = INF;
            }
        }
        let mut found_free = false;
        while let Some(l) = queue.pop_front() {
            for &r in b.neighbors(l) {
                let m = mate_right[r as usize];
                if m == UNMATCHED {
                    found_free = true;
                } else if dist[m as usize] == INF {
                    dist[m as usize] = dist[l as usize] + 1;
                    queue.push_back(m);
                }
            }
        }
        if !found_free {
            break;
        }

        next_edge.iter_mut().for_each(|e| *e = 0);
        for root in 0..nl as u32 {
            if mate_left[root as usize] != UNMATCHED || dist[root as usize] != 0 {
                continue;
            }
            stack.clear();
            stack.push(root);
            while let Some(&l) = stack.last() {
                let li = l as usize;
                if next_edge[li] < b.adj[li].len() {
                    let r = b.adj[li][next_edge[li]];
                    next_edge[li] += 1;
                    let m = mate_right[r as usize];
                    if m == UNMATCHED {
                        for &x in &stack {
                            let y = b.adj[x as usize][next_edge[x as usize] - 1];
                            mate_left[x as usize] = y;
                            mate_right[y as usize] = x;
                        }
                        size += 1;
                        break;
                    } else if dist[m as usize] == dist[li].wrapping_add(1) {
                        stack.push(m);
                    }
                } else {
                    dist[li] = INF;
                    stack.pop();
                }
            }
        }
    }
    Matching {
        mate_left,
        mate_right,
        size,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

/// A set `X` on one side with `|N(X)| < |X|`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallWitness {
    pub side: Side,
    pub set: Vec<u32>,
    pub neighbourhood: Vec<u32>,
}

impl HallWitness {
    pub fn deficiency(&self) -> usize {
        self.set.len().saturating_sub(self.neighbourhood.len())
    }
}

fn left_violator(b: &Bipartite, m: &Matching) -> Option<(Vec<u32>, Vec<u32>)> {
    let mut seen_left = vec![false; b.left()];
    let mut seen_right = vec![false; b.right()];
    let mut queue: VecDeque<u32> = (0..b.left() as u32)
        .filter(|&l| m.mate_of_left(l).is_none())
        .collect();
    if queue.is_empty() {
        return None;
    }
    for &l in &queue {
        seen_left[l as usize] = true;
    }
    while let Some(l) = queue.pop_front() {
        for &r in b.neighbors(l) {
            if std::mem::replace(&mut seen_right[r as usize], true) {
                continue;
            }
            if let Some(next) = m.mate_of_right(r) {
                if !std::mem::replace(&mut seen_left[next as usize], true) {
                    queue.push_back(next);
                }
            }
        }
    }
    let pick = |seen: &[bool]| -> Vec<u32> {
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i as u32)
            .collect()
    };
    Some((pick(&seen_left), pick(&seen_right)))
}

/// Hall violator on the requested side, read off the alternating-reachable
/// layer from that side's unmatched vertices. `m` must be maximum; returns
/// `None` when that side is saturated.
pub fn hall_violator(b: &Bipartite, m: &Matching, side: Side) -> Option<HallWitness> {
    let found = match side {
        Side::Left => left_violator(b, m),
        Side::Right => left_violator(&b.transpose(), &m.swapped()),
    };
    found.map(|(set, neighbourhood)| HallWitness {
        side,
        set,
        neighbourhood,
    })
}
