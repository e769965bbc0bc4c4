//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Every reference value here comes from an oracle written in this file
//! (Jacobi eigensolver, BFS distances, brute-force matchings, direct
//! neighbour counts), not from the library code under test.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use crown_core::certificate::Crown;
use crown_core::certify::{square_hamilton_order, verify_crown, verify_square_hamilton, CrownCheck};
use crown_core::embedder::{expanding_check, EmbedError, ExpandOptions, NodeId, PartialEmbedding, Policy};
use crown_core::generators::{complete, crown_fixture, cycle, paley, petersen, random_regular};
use crown_core::matching::{hall_violator, hopcroft_karp, Bipartite, Side};
use crown_core::matchmaker::{split_matchmakers, MatchmakerOptions};
use crown_core::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use crown_core::spectral::{dense_lambda, eml_audit, estimate_lambda, AuditMode, SpectralOptions};
use crown_core::{Graph, VertexSet};

/// Spectral agreement with the eigensolver oracle.
const SPECTRAL_TOL: f64 = 1e-9;
/// Slack allowed when re-checking mixing bounds in floating point.
const EML_FLOAT_SLACK: f64 = 1e-9;

const C1_FIXTURES: usize = 200;
const C1_BUDGET: Duration = Duration::from_secs(10);
const C2_HOSTS: usize = 100;
const C2_MAX_N: usize = 20;
const C2_MAX_OPS: usize = 30;
const C2_MAX_SCALE: usize = 6;
const C2_MAX_D: usize = 3;
const C2_BUDGET: Duration = Duration::from_secs(120);
const C3_BUDGET: Duration = Duration::from_secs(10);
const C4_BUDGET: Duration = Duration::from_secs(60);
const C5_N: usize = 2000;
const C5_D: usize = 200;
const C5_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const C5_DELTA1: f64 = 0.048;
const C5_BUDGET: Duration = Duration::from_secs(30);
const C6_INSTANCES: usize = 500;
const C7_BUDGET: Duration = Duration::from_secs(600);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 square-Hamilton reduction on random crown fixtures", c1_reduction),
        ("2 goodness oracle equivalence", c2_goodness),
        ("3 spectral exactness", c3_spectral),
        ("4 exhaustive mixing audit", c4_mixing),
        ("5 matchmaker split", c5_matchmaker),
        ("6 matching oracle", c6_matching),
        ("7 end-to-end relaxed run", c7_end_to_end),
        ("8 budget arithmetic", c8_budgets),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {status} ({:.1} s) {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}

// Criterion 1.

/// Max BFS distance between cyclically consecutive entries of `order`.
fn bfs_max_gap(g: &Graph, order: &[u32]) -> usize {
    let n = g.n();
    let mut worst = 0;
    let mut dist = vec![usize::MAX; n];
    for i in 0..order.len() {
        let (s, t) = (order[i], order[(i + 1) % order.len()]);
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s as usize] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            if v == t || dist[v as usize] >= 2 {
                continue;
            }
            for &w in g.neighbors(v) {
                if dist[w as usize] == usize::MAX {
                    dist[w as usize] = dist[v as usize] + 1;
                    q.push_back(w);
                }
            }
        }
        worst = worst.max(dist[t as usize]);
    }
    worst
}

/// Fixture relabelled by a random permutation, with a few random chords.
fn random_fixture(rng: &mut StdRng) -> (Graph, Crown) {
    let len = rng.gen_range(3..=200);
    let density = *[0.0, 0.1, 0.5, 0.9, 1.0].choose(rng).unwrap();
    let spikes: Vec<usize> = (0..len).filter(|_| rng.gen_bool(density)).collect();
    let (g, crown) = crown_fixture(len, &spikes).expect("valid fixture");
    let n = g.n();
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(rng);
    let mut edges: Vec<(u32, u32)> = g.edges().map(|(u, v)| (perm[u as usize], perm[v as usize])).collect();
    for _ in 0..rng.gen_range(0..=n / 4) {
        let (u, v) = (rng.gen_range(0..n as u32), rng.gen_range(0..n as u32));
        if u != v {
            edges.push((u, v));
        }
    }
    let g = Graph::from_edges(n, &edges).expect("relabelled fixture");
    let crown = Crown {
        cycle: crown.cycle.iter().map(|&v| perm[v as usize]).collect(),
        spikes: crown.spikes.iter().map(|&(a, b)| (perm[a as usize], perm[b as usize])).collect(),
    };
    (g, crown)
}

fn c1_reduction() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut failures = Vec::new();
    for i in 0..C1_FIXTURES {
        let (g, crown) = random_fixture(&mut rng);
        let check = CrownCheck {
            spanning: true,
            spike_count: None,
        };
        if !verify_crown(&g, &crown, check).is_valid() {
            failures.push(format!("fixture {i}: crown rejected"));
            continue;
        }
        let order = match square_hamilton_order(&crown, g.n()) {
            Ok(c) => c.order,
            Err(e) => {
                failures.push(format!("fixture {i}: {e}"));
                continue;
            }
        };
        let mut sorted = order.clone();
        sorted.sort_unstable();
        let is_perm = sorted == (0..g.n() as u32).collect::<Vec<_>>();
        let gap = bfs_max_gap(&g, &order);
        if !verify_square_hamilton(&g, &order).ok || !is_perm || gap > 2 {
            failures.push(format!("fixture {i}: permutation {is_perm}, max gap {gap}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < C1_BUDGET,
        format!("{C1_FIXTURES} fixtures, {} failures {:?}", failures.len(), failures.first()),
    )
}

// Criterion 2.

fn gnp(rng: &mut StdRng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in u + 1..n as u32 {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

#[derive(Default)]
struct GoodnessTally {
    hosts: usize,
    covered_hosts: usize,
    ops: usize,
    extends: usize,
    rollbacks: usize,
    rejected: usize,
    divergences: Vec<String>,
}

/// Exact and incremental verdicts agree, the state is good and the
/// bookkeeping is consistent.
fn audit_state(e: &PartialEmbedding, tally: &mut GoodnessTally, ctx: &str) {
    let exact = e.goodness_exact(u64::MAX).expect("small host");
    let inc = e.goodness_incremental(u64::MAX).expect("small host");
    if exact.good != inc.good {
        tally.divergences.push(format!("{ctx}: exact {} vs incremental {}", exact.good, inc.good));
    }
    if !exact.good {
        tally.divergences.push(format!("{ctx}: state not good, witness {:?}", exact.witness));
    }
    if let Err(msg) = e.check_structure() {
        tally.divergences.push(format!("{ctx}: {msg}"));
    }
}

fn c2_goodness() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut tally = GoodnessTally::default();
    while tally.hosts < C2_HOSTS {
        let n = rng.gen_range(8..=C2_MAX_N);
        let p = rng.gen_range(0.5..0.95);
        let g = gnp(&mut rng, n, p);
        let u = VertexSet::full(n);
        // Goodness scale is even, 2s - 2 for a forest of at most s vertices.
        let mut scale = 2 * rng.gen_range(1..=C2_MAX_SCALE / 2);
        let cap = rng.gen_range(1..=C2_MAX_D);
        // Precondition: the empty forest is good.
        while scale > 0 && !PartialEmbedding::new(&g, u.clone(), scale, cap).goodness_exact(u64::MAX).unwrap().good {
            scale -= 2;
        }
        if scale == 0 {
            continue;
        }
        tally.hosts += 1;
        let covered = expanding_check(&g, &u, scale, (cap + 2) as f64, &ExpandOptions::default());
        assert!(covered.exhaustive);
        tally.covered_hosts += usize::from(covered.holds);

        let mut e = PartialEmbedding::new(&g, u.clone(), scale, cap);
        let ops = rng.gen_range(1..=C2_MAX_OPS);
        for step in 0..ops {
            let ctx = format!("host {} (n {n}, s {scale}, D {cap}) op {step}", tally.hosts);
            let ids: Vec<NodeId> = e.node_ids().collect();
            let extend = ids.is_empty() || rng.gen_bool(0.65);
            if extend {
                if ids.is_empty() || (e.len() < e.size_limit() && rng.gen_bool(0.15)) {
                    let free: Vec<u32> = u.iter().filter(|&v| !e.used().contains(v)).collect();
                    let Some(&v) = free.choose(&mut rng) else { continue };
                    let Ok(id) = e.place(v) else {
                        tally.rejected += 1;
                        continue;
                    };
                    if !e.goodness_exact(u64::MAX).unwrap().good {
                        e.rollback_leaf(id).unwrap();
                        tally.rejected += 1;
                        continue;
                    }
                } else {
                    let parent = *ids.choose(&mut rng).unwrap();
                    let open = e.degree(parent).unwrap() < cap && e.len() < e.size_limit();
                    match e.extend_leaf(parent, Policy::Certified) {
                        Ok(_) => {}
                        Err(EmbedError::NoGoodCandidate { .. } | EmbedError::Saturated(_)) if covered.holds && open => {
                            tally.divergences.push(format!("{ctx}: extension failed on a covered host"));
                            continue;
                        }
                        Err(_) => {
                            tally.rejected += 1;
                            continue;
                        }
                    }
                }
                tally.extends += 1;
            } else {
                let leaves: Vec<NodeId> = ids.into_iter().filter(|&id| e.degree(id).unwrap() <= 1).collect();
                let Some(&leaf) = leaves.choose(&mut rng) else { continue };
                e.rollback_leaf(leaf).unwrap();
                tally.rollbacks += 1;
            }
            tally.ops += 1;
            audit_state(&e, &mut tally, &ctx);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        tally.divergences.is_empty() && elapsed < C2_BUDGET,
        format!(
            "{} hosts ({} covered), {} ops ({} extends, {} rollbacks, {} rejected), {} divergences {:?}",
            tally.hosts,
            tally.covered_hosts,
            tally.ops,
            tally.extends,
            tally.rollbacks,
            tally.rejected,
            tally.divergences.len(),
            tally.divergences.first()
        ),
    )
}

// Criterion 3.

/// Cyclic Jacobi eigenvalue iteration on a dense symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Second largest absolute adjacency eigenvalue by the Jacobi oracle.
fn oracle_lambda(g: &Graph) -> f64 {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for (u, v) in g.edges() {
        a[u as usize][v as usize] = 1.0;
        a[v as usize][u as usize] = 1.0;
    }
    let eig = jacobi_eigenvalues(a);
    eig[1..].iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn c3_spectral() -> Outcome {
    let start = Instant::now();
    let opts = SpectralOptions {
        tol: 1e-14,
        max_iter: 200_000,
        ..SpectralOptions::default()
    };
    let mut cases: Vec<(String, Graph, Option<f64>)> = Vec::new();
    for n in [5, 10, 20] {
        cases.push((format!("K{n}"), complete(n), Some(1.0)));
    }
    for n in [5, 8, 11, 16] {
        cases.push((format!("C{n}"), cycle(n), None));
    }
    cases.push(("Petersen".into(), petersen(), Some(2.0)));
    for q in [13u64, 17, 29] {
        cases.push((format!("Paley({q})"), paley(q).unwrap(), Some(((q as f64).sqrt() + 1.0) / 2.0)));
    }
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (name, g, closed_form) in &cases {
        let oracle = oracle_lambda(g);
        let est = match estimate_lambda(g, &opts) {
            Ok(c) => c.lambda_est,
            Err(e) => {
                bad.push(format!("{name}: {e}"));
                continue;
            }
        };
        let mut err = (est - oracle).abs();
        if let Some(exact) = closed_form {
            err = err.max((oracle - exact).abs());
        }
        worst = worst.max(err);
        if err > SPECTRAL_TOL {
            bad.push(format!("{name}: estimate {est}, oracle {oracle}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < C3_BUDGET,
        format!("{} graphs, worst error {worst:.2e} (tol {SPECTRAL_TOL:e}) {:?}", cases.len(), bad.first()),
    )
}

// Criterion 4.

fn c4_mixing() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, g) in [("Petersen", petersen()), ("Paley(13)", paley(13).unwrap())] {
        let n = g.n();
        let lambda = dense_lambda(&g, 64).unwrap().lambda_est;
        let report = eml_audit(&g, lambda, &AuditMode::Exhaustive { max_size: None }, 0).unwrap();
        let expected_pairs = ((1u64 << n) - 1).pow(2);
        // Spot-check the bound on random pairs with a direct edge count.
        let d = g.degree_max() as f64;
        let mut spot_violations = 0;
        for _ in 0..2000 {
            let b: Vec<u32> = (0..n as u32).filter(|_| rng.gen_bool(0.5)).collect();
            let c: Vec<u32> = (0..n as u32).filter(|_| rng.gen_bool(0.5)).collect();
            if b.is_empty() || c.is_empty() {
                continue;
            }
            let e: usize = b.iter().map(|&v| c.iter().filter(|&&w| g.has_edge(v, w)).count()).sum();
            let dev = (e as f64 - (b.len() * c.len()) as f64 * d / n as f64).abs();
            if dev > lambda * ((b.len() * c.len()) as f64).sqrt() + EML_FLOAT_SLACK {
                spot_violations += 1;
            }
        }
        pass &= report.violation_count == 0 && report.checked_pairs == expected_pairs && spot_violations == 0;
        details.push(format!(
            "{name}: {} pairs, {} violations, worst slack {:.4}",
            report.checked_pairs, report.violation_count, report.worst_slack
        ));
    }
    outcome(pass && start.elapsed() < C4_BUDGET, details.join("; "))
}

// Criterion 5.

fn c5_matchmaker() -> Outcome {
    let start = Instant::now();
    let need = C5_D / 84;
    let size_cap = (C5_DELTA1 * C5_N as f64).floor() as usize;
    let mut details = Vec::new();
    let mut pass = true;
    for seed in C5_SEEDS {
        let g = random_regular(C5_N, C5_D, seed).unwrap();
        let opts = MatchmakerOptions::new(C5_DELTA1, seed, C5_N);
        let t = match split_matchmakers(&g, &opts) {
            Ok(t) => t,
            Err(e) => {
                pass = false;
                details.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let sets = t.sets();
        let disjoint = sets[0].is_disjoint(sets[1]) && sets[0].is_disjoint(sets[2]) && sets[1].is_disjoint(sets[2]);
        let min_deg = (0..C5_N as u32)
            .flat_map(|v| sets.map(|s| g.neighbors(v).iter().filter(|&&w| s.contains(w)).count()))
            .min()
            .unwrap();
        let max_size = sets.iter().map(|s| s.len()).max().unwrap();
        let ok = disjoint && min_deg >= need && max_size <= size_cap && t.resamples_used <= 10 * C5_N;
        pass &= ok;
        details.push(format!(
            "seed {seed}: min deg {min_deg}, max size {max_size}, resamples {}",
            t.resamples_used
        ));
    }
    outcome(
        pass && start.elapsed() < C5_BUDGET,
        format!("need deg >= {need}, size <= {size_cap}; {}", details.join("; ")),
    )
}

// Criterion 6.

/// Maximum matching by DP over subsets of the right side.
fn brute_matching(left: usize, right: usize, edges: &HashSet<(u32, u32)>) -> usize {
    let mut best = vec![0usize; 1 << right];
    for l in 0..left as u32 {
        let mut next = best.clone();
        for mask in 0..1usize << right {
            for r in 0..right as u32 {
                if mask >> r & 1 == 0 && edges.contains(&(l, r)) {
                    let m2 = mask | 1 << r;
                    next[m2] = next[m2].max(best[mask] + 1);
                }
            }
        }
        for mask in 0..1usize << right {
            next[mask] = next[mask].max(best[mask]);
        }
        best = next;
    }
    best.into_iter().max().unwrap()
}

fn c6_matching() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut witness_errors = 0;
    for _ in 0..C6_INSTANCES {
        let (l, r) = (rng.gen_range(0..=8), rng.gen_range(0..=8));
        let p = rng.gen_range(0.0..0.6);
        let edges: HashSet<(u32, u32)> = (0..l as u32)
            .flat_map(|a| (0..r as u32).map(move |b| (a, b)))
            .filter(|_| rng.gen_bool(p))
            .collect();
        let list: Vec<(u32, u32)> = edges.iter().copied().collect();
        let b = Bipartite::from_edges(l, r, &list);
        let m = hopcroft_karp(&b);
        if m.size() != brute_matching(l, r, &edges) {
            mismatches += 1;
        }
        if m.pairs().iter().any(|pr| !edges.contains(pr)) {
            mismatches += 1;
        }
        if let Some(w) = hall_violator(&b, &m, Side::Left) {
            let nb: HashSet<u32> = w.set.iter().flat_map(|&x| b.neighbors(x).iter().copied()).collect();
            if nb.len() >= w.set.len() || w.deficiency() != l - m.size() {
                witness_errors += 1;
            }
        } else if m.size() != l {
            witness_errors += 1;
        }
    }
    outcome(
        mismatches == 0 && witness_errors == 0,
        format!("{C6_INSTANCES} instances, {mismatches} size mismatches, {witness_errors} witness errors"),
    )
}

// Criterion 7.

fn crown_bin(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crown"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("crown binary runs")
}

fn c7_end_to_end() -> Outcome {
    let start = Instant::now();
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/relaxed-run.json");
    let cfg: Value = serde_json::from_str(&fs::read_to_string(&config_path).expect("run config")).unwrap();
    let get = |k: &str| cfg[k].to_string();
    let (n, d, delta) = (get("n"), get("d"), get("delta"));
    let tmp = tempfile::TempDir::new().unwrap();
    let dir = tmp.path();

    let out = crown_bin(
        &["generate", "--family", "random-regular", "--n", &n, "--d", &d, "--seed", &get("graph_seed"), "-o", "g.el"],
        dir,
    );
    if !out.status.success() {
        return outcome(false, format!("generate failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let mut args = vec![
        "crown".to_string(),
        "g.el".into(),
        "--delta".into(),
        delta.clone(),
        "--delta1".into(),
        get("delta1"),
        "--seed".into(),
        get("seed"),
        "--tol".into(),
        get("tol"),
        "-o".into(),
        "cert.json".into(),
    ];
    if cfg["force"].as_bool() == Some(true) {
        args.push("--force".into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = crown_bin(&args, dir);
    if !out.status.success() {
        return outcome(
            false,
            format!("crown exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)),
        );
    }
    let verify = crown_bin(&["verify", "g.el", "cert.json"], dir);

    let cert: Value = serde_json::from_str(&fs::read_to_string(dir.join("cert.json")).unwrap()).unwrap();
    let n_val: usize = n.parse().unwrap();
    let cycle_len = cert["crown"]["cycle"].as_array().map_or(0, Vec::len);
    let spikes = cert["crown"]["spikes"].as_array().map_or(0, Vec::len);
    let ratio = cert["spectral"]["lambda_est"].as_f64().unwrap_or(f64::INFINITY)
        / cert["spectral"]["d"].as_f64().unwrap_or(0.0);
    let delta_val: f64 = delta.parse().unwrap();
    let forced = cert["parameters"]["forced"].as_bool().unwrap_or(true);
    let elapsed = start.elapsed();
    let pass = verify.status.code() == Some(0)
        && cycle_len == n_val.div_ceil(2)
        && spikes == n_val / 2
        && ratio <= delta_val
        && !forced
        && elapsed < C7_BUDGET;
    outcome(
        pass,
        format!(
            "n {n}, d {d}, delta {delta}, seed {}: lambda/d {ratio:.5}, cycle {cycle_len}, spikes {spikes}, verify exit {:?}",
            get("seed"),
            verify.status.code()
        ),
    )
}

// Criterion 8.

struct CapRun {
    n: usize,
    d: usize,
    delta: f64,
    seed: u64,
}

const C8_RUNS: [CapRun; 3] = [
    CapRun {
        n: 2000,
        d: 400,
        delta: 0.01,
        seed: 1,
    },
    CapRun {
        n: 3000,
        d: 300,
        delta: 0.01,
        seed: 2,
    },
    CapRun {
        n: 4000,
        d: 400,
        delta: 0.005,
        seed: 3,
    },
];

fn stage_detail(cert: &crown_core::PipelineCertificate, stage: &str, key: &str) -> Option<f64> {
    cert.stages
        .iter()
        .find(|s| s.stage == stage)
        .and_then(|s| s.details.get(key))
        .and_then(Value::as_f64)
}

fn c8_budgets() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for run in &C8_RUNS {
        let g = random_regular(run.n, run.d, run.seed).unwrap();
        let mut cfg = PipelineConfig::new(run.delta, run.seed);
        cfg.delta1 = 0.1;
        cfg.force = true;
        cfg.spectral.tol = 1e-4;
        let delta_n = run.delta * run.n as f64;
        let consumption_cap = (70.0 * delta_n).floor();
        let broom_cap = (78.0 * delta_n).floor();
        let cert = match run_pipeline(&g, &cfg) {
            Ok(r) => r.certificate,
            Err(e) => {
                pass = false;
                details.push(format!("n {}: baseline run failed: {e}", run.n));
                continue;
            }
        };
        let peak = stage_detail(&cert, "serpent", "peak_forest").unwrap_or(f64::INFINITY);
        let broom = stage_detail(&cert, "first-broom", "vertices").unwrap_or(f64::INFINITY);
        // Caps must bind below n for the check to mean anything.
        let binding = consumption_cap < run.n as f64 && broom_cap < run.n as f64;
        let within = peak <= consumption_cap && broom <= broom_cap;

        // A consumption cap below the observed peak must stop the serpent.
        let mut tight = cfg.clone();
        tight.budgets.consumption_factor = (peak - 1.0) / delta_n;
        let serpent_fails = matches!(
            run_pipeline(&g, &tight),
            Err(PipelineError::Stage { failure, certificate, .. })
                if failure.stage == "serpent" && !failure.diagnostics.is_null() && certificate.crown.is_none()
        );
        // Likewise a broom cap below the broom size.
        let mut tight = cfg.clone();
        tight.budgets.broom_factor = (broom - 1.0) / delta_n;
        let broom_fails = matches!(
            run_pipeline(&g, &tight),
            Err(PipelineError::Stage { failure, certificate, .. })
                if failure.stage == "first-broom" && !failure.diagnostics.is_null() && certificate.crown.is_none()
        );
        pass &= binding && within && serpent_fails && broom_fails;
        details.push(format!(
            "n {} d {} delta {}: peak {peak} <= {consumption_cap}, broom {broom} <= {broom_cap}, tightened caps fail: {serpent_fails}/{broom_fails}",
            run.n, run.d, run.delta
        ));
    }
    outcome(pass, details.join("; "))
}
