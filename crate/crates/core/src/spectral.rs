//! Second-eigenvalue estimation and edge-distribution audits.
//!
//! `lambda` throughout means the largest magnitude among the nontrivial
//! adjacency eigenvalues, i.e. `max_{i >= 2} |lambda_i|`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, VertexSet};
use crate::rng::{SeedSource, Stream};

/// Largest `n` for which the dense eigensolver is allowed.
pub const DEFAULT_DENSE_CAP: usize = 1024;
/// Largest `n` for which exhaustive subset enumeration is allowed.
pub const EXHAUSTIVE_CAP: usize = 16;

const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error(
        "graph is not regular (degrees {min}..={max}); the all-ones deflation is only exact for \
         regular graphs, use the dense-exact method instead"
    )]
    NotRegular { min: usize, max: usize },
    #[error("power iteration did not converge in {iterations} iterations; last window bracket [{low}, {high}]")]
    NotConverged {
        iterations: usize,
        low: f64,
        high: f64,
    },
    #[error("dense eigensolve refused: n = {n} exceeds cap {cap}")]
    DenseTooLarge { n: usize, cap: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum LemmaError {
    #[error("|X| = {size} is below δn = {required}")]
    XTooSmall { size: usize, required: f64 },
    #[error("|X| = {size} exceeds δn = {limit}")]
    XTooLarge { size: usize, limit: f64 },
    #[error("X is not a subset of U")]
    NotSubset,
    #[error("d1 = {d1} is below 2δd = {required}")]
    D1TooSmall { d1: usize, required: f64 },
    #[error("vertex {vertex} has {found} neighbours in S, fewer than d1 = {d1}")]
    MinDegreeIntoS { vertex: u32, found: usize, d1: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralMethod {
    PowerDeflated,
    DenseExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub lambda_est: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub method: SpectralMethod,
    pub is_regular: bool,
    pub d: usize,
}

impl SpectralCertificate {
    pub fn ratio(&self) -> f64 {
        if self.d == 0 {
            f64::INFINITY
        } else {
            self.lambda_est / self.d as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    /// Power iteration; on non-convergence fall back to the dense solver
    /// when `n <= dense_cap`.
    Auto,
    Power,
    Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub dense_cap: usize,
    pub method: MethodChoice,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 5000,
            dense_cap: DEFAULT_DENSE_CAP,
            method: MethodChoice::Auto,
            seed: 0,
        }
    }
}

pub fn estimate_lambda(g: &Graph, opts: &SpectralOptions) -> Result<SpectralCertificate, SpectralError> {
    match opts.method {
        MethodChoice::Dense => dense_lambda(g, opts.dense_cap),
        MethodChoice::Power => power_lambda(g, opts),
        MethodChoice::Auto => match power_lambda(g, opts) {
            Err(SpectralError::NotConverged { .. }) if g.n() <= opts.dense_cap => {
                dense_lambda(g, opts.dense_cap)
            }
            other => other,
        },
    }
}

fn project_out_ones(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn adjacency_apply(g: &Graph, x: &[f64], y: &mut [f64]) {
    let kernel = |(v, out): (usize, &mut f64)| {
        *out = g.neighbors(v as u32).iter().map(|&w| x[w as usize]).sum();
    };
    if g.edge_count() > 1 << 16 {
        y.par_iter_mut().enumerate().for_each(kernel);
    } else {
        y.iter_mut().enumerate().for_each(kernel);
    }
}

/// Power iteration on the adjacency operator restricted to the complement
/// of the all-ones vector, re-orthogonalized every step. Reports
/// `||A x|| / ||x||`, which converges to the top nontrivial magnitude from
/// below regardless of the sign of the dominant eigenvalue.
pub fn power_lambda(g: &Graph, opts: &SpectralOptions) -> Result<SpectralCertificate, SpectralError> {
    if !(opts.tol > 0.0) {
        return Err(SpectralError::BadTolerance(opts.tol));
    }
    if !g.is_regular() {
        return Err(SpectralError::NotRegular {
            min: g.degree_min(),
            max: g.degree_max(),
        });
    }
    let n = g.n();
    let d = g.degree_max();
    let cert = |lambda_est: f64, iterations| SpectralCertificate {
        lambda_est,
        tolerance: opts.tol,
        iterations,
        method: SpectralMethod::PowerDeflated,
        is_regular: true,
        d,
    };
    if n < 2 {
        return Ok(cert(0.0, 0));
    }

    let mut rng = SeedSource::new(opts.seed).stream(Stream::Spectral);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project_out_ones(&mut x);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; n];
    let mut history: Vec<f64> = Vec::new();

    for iter in 1..=opts.max_iter {
        adjacency_apply(g, &x, &mut y);
        project_out_ones(&mut y);
        let r = norm(&y);
        if r < 1e-300 {
            return Ok(cert(0.0, iter));
        }
        history.push(r);
        if history.len() > CONVERGENCE_WINDOW {
            let prev = history[history.len() - 1 - CONVERGENCE_WINDOW];
            if (r - prev).abs() <= opts.tol * r {
                return Ok(cert(r.min(d as f64), iter));
            }
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / r;
        }
    }
    let window = &history[history.len().saturating_sub(CONVERGENCE_WINDOW + 1)..];
    Err(SpectralError::NotConverged {
        iterations: opts.max_iter,
        low: window.iter().copied().fold(f64::INFINITY, f64::min),
        high: window.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// All adjacency eigenvalues, descending. Dense; refuses `n > cap`.
pub fn dense_spectrum(g: &Graph, cap: usize) -> Result<Vec<f64>, SpectralError> {
    let n = g.n();
    if n > cap {
        return Err(SpectralError::DenseTooLarge { n, cap });
    }
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (u, v) in g.edges() {
        a[(u as usize, v as usize)] = 1.0;
        a[(v as usize, u as usize)] = 1.0;
    }
    let mut eig: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

pub fn dense_lambda(g: &Graph, cap: usize) -> Result<SpectralCertificate, SpectralError> {
    let eig = dense_spectrum(g, cap)?;
    let lambda_est = eig.iter().skip(1).map(|v| v.abs()).fold(0.0, f64::max);
    Ok(SpectralCertificate {
        lambda_est,
        tolerance: 1e-9,
        iterations: 0,
        method: SpectralMethod::DenseExact,
        is_regular: g.is_regular(),
        d: g.degree_max(),
    })
}

/// One pair `(B, C)` whose edge count strays past the mixing bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingViolation {
    pub b: Vec<u32>,
    pub c: Vec<u32>,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub checked_pairs: u64,
    pub worst_slack: f64,
    pub violation_count: u64,
    /// First violations found, capped at [`ExpansionReport::KEEP`].
    pub violations: Vec<MixingViolation>,
}

impl ExpansionReport {
    pub const KEEP: usize = 32;

    pub fn empty() -> Self {
        Self {
            checked_pairs: 0,
            worst_slack: f64::INFINITY,
            violation_count: 0,
            violations: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }

    /// Associative merge of two partial reports.
    pub fn merge(mut self, other: Self) -> Self {
        self.checked_pairs += other.checked_pairs;
        self.worst_slack = self.worst_slack.min(other.worst_slack);
        self.violation_count += other.violation_count;
        let room = Self::KEEP.saturating_sub(self.violations.len());
        self.violations.extend(other.violations.into_iter().take(room));
        self
    }

    fn record(&mut self, slack: f64, make: impl FnOnce() -> MixingViolation) {
        self.checked_pairs += 1;
        self.worst_slack = self.worst_slack.min(slack);
        if slack < 0.0 {
            self.violation_count += 1;
            if self.violations.len() < Self::KEEP {
                self.violations.push(make());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AuditMode {
    /// Every pair of nonempty subsets with sizes up to `max_size`
    /// (`None` = no limit). Requires `n <= EXHAUSTIVE_CAP`.
    Exhaustive { max_size: Option<usize> },
    /// `samples` random pairs, sizes drawn uniformly from `sizes`.
    Sampled { samples: usize, sizes: Vec<usize> },
}

fn mask_to_vec(mask: u32) -> Vec<u32> {
    (0..32).filter(|i| mask >> i & 1 == 1).collect()
}

/// Audits the mixing bound `|e(B,C) - |B||C|d/n| <= lambda sqrt(|B||C|)`
/// over nonempty `B`, `C`. Violations are reported, not raised.
pub fn eml_audit(g: &Graph, lambda: f64, mode: &AuditMode, seed: u64) -> Result<ExpansionReport, GraphError> {
    let n = g.n();
    let d = g.degree_max() as f64;
    let tol = 1e-9 * (1.0 + lambda * n as f64);
    let deviation = |e: usize, b: usize, c: usize| (e as f64 - (b * c) as f64 * d / n as f64).abs();
    match mode {
        AuditMode::Exhaustive { max_size } => {
            assert!(n <= EXHAUSTIVE_CAP, "exhaustive audit limited to n <= {EXHAUSTIVE_CAP}");
            let max_size = max_size.unwrap_or(n).min(n);
            let adj: Vec<u32> = (0..n as u32)
                .map(|v| g.neighbors(v).iter().fold(0u32, |m, &w| m | 1 << w))
                .collect();
            let full = 1u32 << n;
            let bounds: Vec<Vec<f64>> = (0..=n)
                .map(|b| (0..=n).map(|c| lambda * ((b * c) as f64).sqrt()).collect())
                .collect();
            let report = (1..full)
                .into_par_iter()
                .filter(|b| (b.count_ones() as usize) <= max_size)
                .fold(ExpansionReport::empty, |mut rep, b| {
                    let bsize = b.count_ones() as usize;
                    // e(B, C) = sum over v in C of |N(v) ∩ B|, built by subset DP.
                    let weight: Vec<usize> = adj.iter().map(|m| (m & b).count_ones() as usize).collect();
                    let mut e = vec![0usize; full as usize];
                    for c in 1..full {
                        let low = c.trailing_zeros() as usize;
                        e[c as usize] = e[(c & (c - 1)) as usize] + weight[low];
                        let csize = c.count_ones() as usize;
                        if csize > max_size {
                            continue;
                        }
                        let bound = bounds[bsize][csize];
                        let dev = deviation(e[c as usize], bsize, csize);
                        rep.record(bound - dev + tol, || MixingViolation {
                            b: mask_to_vec(b),
                            c: mask_to_vec(c),
                            observed: dev,
                            bound,
                        });
                    }
                    rep
                })
                .reduce(ExpansionReport::empty, ExpansionReport::merge);
            Ok(report)
        }
        AuditMode::Sampled { samples, sizes } => {
            const CHUNK: usize = 256;
            let sizes: Vec<usize> = sizes.iter().copied().filter(|&s| s >= 1 && s <= n).collect();
            if sizes.is_empty() || *samples == 0 {
                return Ok(ExpansionReport::empty());
            }
            let chunks = samples.div_ceil(CHUNK);
            let source = SeedSource::new(seed);
            let report = (0..chunks)
                .into_par_iter()
                .map(|chunk| {
                    let mut rng = source.substream(Stream::Audit, chunk as u64);
                    let mut rep = ExpansionReport::empty();
                    let mut pool: Vec<u32> = (0..n as u32).collect();
                    let count = CHUNK.min(samples - chunk * CHUNK);
                    for _ in 0..count {
                        let bs = *sizes.choose(&mut rng).unwrap();
                        let cs = *sizes.choose(&mut rng).unwrap();
                        let b = VertexSet::from_vertices(n, pool.partial_shuffle(&mut rng, bs).0.iter().copied());
                        let c = VertexSet::from_vertices(n, pool.partial_shuffle(&mut rng, cs).0.iter().copied());
                        let e = g.e_count(&b, &c).expect("same universe");
                        let bound = lambda * ((bs * cs) as f64).sqrt();
                        let dev = deviation(e, bs, cs);
                        rep.record(bound - dev + tol, || MixingViolation {
                            b: b.to_vec(),
                            c: c.to_vec(),
                            observed: dev,
                            bound,
                        });
                    }
                    rep
                })
                .reduce(ExpansionReport::empty, ExpansionReport::merge);
            Ok(report)
        }
    }
}

/// Large sets see almost everything: true iff `|N(X, U)| > |U| - |X| - δn`.
/// Requires `X ⊆ U` and `|X| >= δn`.
pub fn lemma1_check(g: &Graph, u: &VertexSet, x: &VertexSet, delta: f64) -> Result<bool, LemmaError> {
    let dn = delta * g.n() as f64;
    if (x.len() as f64) < dn {
        return Err(LemmaError::XTooSmall {
            size: x.len(),
            required: dn,
        });
    }
    if !x.is_subset(u) {
        return Err(LemmaError::NotSubset);
    }
    let outside = g.nbhd(x, &u.difference(x))?;
    Ok(outside.len() as f64 > u.len() as f64 - x.len() as f64 - dn)
}

/// Matchmaker expansion: with every vertex having `>= d1` neighbours in
/// `S`, true iff `|Γ(X, S)| >= d1 / (2δd) · |X|`. Precondition failures are
/// reported as distinct errors.
pub fn lemma2_check(g: &Graph, s: &VertexSet, d1: usize, x: &VertexSet, delta: f64) -> Result<bool, LemmaError> {
    let d = g.degree_min() as f64;
    let required = 2.0 * delta * d;
    if (d1 as f64) < required {
        return Err(LemmaError::D1TooSmall { d1, required });
    }
    let limit = delta * g.n() as f64;
    if x.len() as f64 > limit {
        return Err(LemmaError::XTooLarge { size: x.len(), limit });
    }
    for v in 0..g.n() as u32 {
        let found = g.degree_into(v, s);
        if found < d1 {
            return Err(LemmaError::MinDegreeIntoS { vertex: v, found, d1 });
        }
    }
    let a = d1 as f64 / required;
    let gamma = g.gamma(x, s)?;
    Ok(gamma.len() as f64 >= a * x.len() as f64)
}
