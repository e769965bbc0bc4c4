//! `crown`: generate graphs, audit them, run the crown pipeline and verify
//! certificates.
//!
//! Exit codes: 0 success or valid, 1 stage failure or invalid certificate,
//! 2 refusal, usage, malformed input or IO error.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crown_core::certificate::{CertificateStatus, PipelineCertificate};
use crown_core::certify::{square_hamilton_order, verify_crown, verify_square_hamilton, CrownCheck};
use crown_core::generators::{generate, GenSpec};
use crown_core::matchmaker::{split_matchmakers, MatchmakerOptions};
use crown_core::pipeline::{run_pipeline, Budgets, PipelineConfig, PipelineError};
use crown_core::spectral::{eml_audit, estimate_lambda, AuditMode, SpectralOptions, EXHAUSTIVE_CAP};
use crown_core::Graph;

#[derive(Parser, Debug)]
#[command(name = "crown", version, about = "Spanning crowns in spectral expanders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a graph in edge-list format.
    Generate(GenerateArgs),
    /// Degree, spectral and mixing summary of a graph.
    Analyze(AnalyzeArgs),
    /// Split a graph into three matchmaker sets.
    Split(SplitArgs),
    /// Run the pipeline and write a certificate.
    Crown(CrownArgs),
    /// Check a certificate against a graph.
    Verify(VerifyArgs),
    /// Generate a small random regular graph, find a crown and verify it.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    RandomRegular,
    Paley,
    Fixture,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Paley order.
    #[arg(long)]
    q: Option<u64>,
    /// Fixture cycle length.
    #[arg(long)]
    cycle: Option<usize>,
    /// Fixture cycle positions carrying a spike.
    #[arg(long, value_delimiter = ',')]
    spikes: Vec<usize>,
    /// Output path; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Ground-truth certificate path for fixtures (default `<out>.cert.json`).
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Print a degree and spectral summary to stderr.
    #[arg(long)]
    analyze: bool,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    /// Power-iteration tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
}

impl SpectralArgs {
    fn options(&self, seed: u64) -> SpectralOptions {
        SpectralOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
            ..SpectralOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    graph: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random subset pairs for the mixing audit on large graphs.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[command(flatten)]
    spectral: SpectralArgs,
}

#[derive(Args, Debug)]
struct SplitArgs {
    graph: PathBuf,
    #[arg(long, default_value_t = 0.048)]
    delta1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the three sets as JSON.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value_t = 0.001)]
    delta: f64,
    /// Defaults to `48·delta`.
    #[arg(long)]
    delta1: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run even when lambda/d exceeds delta.
    #[arg(long)]
    force: bool,
    /// Matchmaker resampling budget (default `10·n`).
    #[arg(long)]
    max_resamples: Option<usize>,
    /// Embedder backtracking budget per tree.
    #[arg(long, default_value_t = Budgets::default().backtracks)]
    backtracks: usize,
    /// Serpent consumption cap in units of `delta·n`.
    #[arg(long, default_value_t = Budgets::default().consumption_factor)]
    consumption_factor: f64,
    /// First double broom cap in units of `delta·n`.
    #[arg(long, default_value_t = Budgets::default().broom_factor)]
    broom_factor: f64,
    #[command(flatten)]
    spectral: SpectralArgs,
}

impl RunArgs {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(self.delta, self.seed);
        if let Some(d1) = self.delta1 {
            cfg.delta1 = d1;
        }
        cfg.force = self.force;
        cfg.spectral = self.spectral.options(self.seed);
        cfg.budgets.max_resamples = self.max_resamples;
        cfg.budgets.backtracks = self.backtracks;
        cfg.budgets.consumption_factor = self.consumption_factor;
        cfg.budgets.broom_factor = self.broom_factor;
        cfg
    }
}

#[derive(Args, Debug)]
struct CrownArgs {
    graph: PathBuf,
    /// Certificate path; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    graph: PathBuf,
    certificate: PathBuf,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 400)]
    d: usize,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    delta1: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for the graph and certificate files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Split(a) => cmd_split(a),
        Command::Crown(a) => cmd_crown(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("CROWN_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&w| w > 0)
        .with_context(|| format!("CROWN_WORKERS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    Ok(())
}

fn read_graph(path: &Path) -> Result<Graph> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Graph::read_edge_list(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_graph(g: &Graph, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut out = io::BufWriter::new(file);
            g.write_edge_list(&mut out)?;
            out.flush()?;
        }
        None => {
            let mut out = io::BufWriter::new(io::stdout().lock());
            g.write_edge_list(&mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json serializes"));
}

fn required<T>(value: Option<T>, flag: &str, family: &str) -> Result<T> {
    value.with_context(|| format!("--{flag} is required for --family {family}"))
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let spec = match a.family {
        Family::RandomRegular => GenSpec::RandomRegular {
            n: required(a.n, "n", "random-regular")?,
            d: required(a.d, "d", "random-regular")?,
            seed: a.seed,
        },
        Family::Paley => GenSpec::Paley {
            q: required(a.q, "q", "paley")?,
        },
        Family::Fixture => GenSpec::Fixture {
            cycle_len: required(a.cycle, "cycle", "fixture")?,
            spikes: a.spikes.clone(),
        },
    };
    let (g, crown) = generate(&spec)?;
    write_graph(&g, a.out.as_deref())?;

    if let Some(crown) = crown {
        let cert_path = a
            .cert
            .clone()
            .or_else(|| a.out.as_ref().map(|o| PathBuf::from(format!("{}.cert.json", o.display()))));
        match cert_path {
            Some(p) => {
                let order = square_hamilton_order(&crown, g.n())?.order;
                let cert = PipelineCertificate::for_crown(&g, crown, Some(order));
                write_text(Some(&p), &cert.to_json())?;
                log::info!("wrote fixture certificate to {}", p.display());
            }
            None => log::warn!("graph written to stdout; pass --cert to keep the fixture certificate"),
        }
    }

    if a.analyze {
        let spectral = estimate_lambda(&g, &SpectralOptions::default())?;
        let summary = json!({
            "n": g.n(),
            "m": g.edge_count(),
            "degree_min": g.degree_min(),
            "degree_max": g.degree_max(),
            "regular": g.is_regular(),
            "lambda": spectral.lambda_est,
            "lambda_over_d": spectral.ratio(),
        });
        eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let g = read_graph(&a.graph)?;
    let spectral = estimate_lambda(&g, &a.spectral.options(a.seed))?;
    let mode = if g.n() <= EXHAUSTIVE_CAP {
        AuditMode::Exhaustive { max_size: None }
    } else {
        let top = (g.n() / 2).max(1);
        let sizes: Vec<usize> = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, top]
            .into_iter()
            .filter(|&s| s <= top)
            .collect();
        AuditMode::Sampled {
            samples: a.samples,
            sizes,
        }
    };
    let audit = eml_audit(&g, spectral.lambda_est, &mode, a.seed)?;
    print_json(&json!({
        "graph": { "n": g.n(), "m": g.edge_count(), "sha256": g.content_hash() },
        "degree_min": g.degree_min(),
        "degree_max": g.degree_max(),
        "regular": g.is_regular(),
        "spectral": spectral,
        "lambda_over_d": spectral.ratio(),
        "mixing_audit": {
            "exhaustive": matches!(mode, AuditMode::Exhaustive { .. }),
            "checked_pairs": audit.checked_pairs,
            "violations": audit.violation_count,
            "worst_slack": audit.worst_slack,
        },
    }));
    Ok(ExitCode::SUCCESS)
}

fn cmd_split(a: SplitArgs) -> Result<ExitCode> {
    let g = read_graph(&a.graph)?;
    let opts = MatchmakerOptions::new(a.delta1, a.seed, g.n());
    let t = split_matchmakers(&g, &opts)?;
    print_json(&json!({
        "k": t.k,
        "threshold": t.threshold,
        "guaranteed_deg": t.guaranteed_deg,
        "sizes": t.sets().map(|s| s.len()),
        "resamples_used": t.resamples_used,
        "repair": t.repair,
    }));
    if let Some(p) = a.out.as_deref() {
        let sets = json!({ "s1": t.s1, "s2": t.s2, "s3": t.s3 });
        write_text(Some(p), &serde_json::to_string_pretty(&sets)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn log_timings(timings: &[(String, std::time::Duration)]) {
    for (stage, t) in timings {
        log::info!("stage {stage}: {:.3} s", t.as_secs_f64());
    }
}

fn cmd_crown(a: CrownArgs) -> Result<ExitCode> {
    let g = read_graph(&a.graph)?;
    let cfg = a.run.config();
    match run_pipeline(&g, &cfg) {
        Ok(run) => {
            log_timings(&run.timings);
            write_text(a.out.as_deref(), &run.certificate.to_json())?;
            eprintln!(
                "crown found: cycle {} + {} spikes on {} vertices",
                run.crown.cycle.len(),
                run.crown.spikes.len(),
                g.n()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(PipelineError::Stage {
            failure,
            certificate,
            timings,
        }) => {
            log_timings(&timings);
            write_text(a.out.as_deref(), &certificate.to_json())?;
            eprintln!("stage {} failed: {}", failure.stage, failure.message);
            eprintln!("diagnostics: {}", failure.diagnostics);
            Ok(ExitCode::from(1))
        }
        Err(e) => bail!(e),
    }
}

/// Clause names of everything wrong with `cert` as a crown certificate for
/// `g`. Empty means valid.
fn audit_certificate(g: &Graph, cert: &PipelineCertificate) -> Vec<String> {
    let mut problems = Vec::new();
    if cert.graph.sha256 != g.content_hash() || cert.graph.n != g.n() || cert.graph.m != g.edge_count() {
        problems.push("graph-hash-mismatch".to_string());
    }
    if cert.status == CertificateStatus::Failed {
        let stage = cert.failure.as_ref().map_or("unknown", |f| f.stage.as_str());
        problems.push(format!("status-failed: stage {stage}"));
    }
    let Some(crown) = &cert.crown else {
        problems.push("crown-missing".to_string());
        return problems;
    };
    let check = CrownCheck {
        spanning: true,
        spike_count: cert.parameters.as_ref().map(|_| g.n() / 2),
    };
    let report = verify_crown(g, crown, check);
    problems.extend(report.violations.iter().map(|v| v.to_string()));
    if let Some(order) = &cert.square_hamilton_order {
        let sq = verify_square_hamilton(g, order);
        if !sq.ok {
            problems.push(format!("square-order-invalid: {:?}", sq.witness));
        }
    }
    problems
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let g = read_graph(&a.graph)?;
    let text = fs::read_to_string(&a.certificate).with_context(|| format!("reading {}", a.certificate.display()))?;
    let cert = PipelineCertificate::from_json(&text).with_context(|| format!("parsing {}", a.certificate.display()))?;
    let problems = audit_certificate(&g, &cert);
    if problems.is_empty() {
        let crown = cert.crown.as_ref().expect("valid certificate has a crown");
        println!(
            "valid: cycle {} + {} spikes on {} vertices",
            crown.cycle.len(),
            crown.spikes.len(),
            g.n()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        for p in &problems {
            println!("invalid: {p}");
        }
        Ok(ExitCode::from(1))
    }
}

fn cmd_demo(a: DemoArgs) -> Result<ExitCode> {
    let (g, _) = generate(&GenSpec::RandomRegular {
        n: a.n,
        d: a.d,
        seed: a.seed,
    })?;
    let mut cfg = PipelineConfig::new(a.delta, a.seed);
    cfg.delta1 = a.delta1;
    cfg.force = true;
    cfg.spectral.tol = 1e-4;
    eprintln!(
        "demo: random {}-regular graph on {} vertices, delta = {}, delta1 = {}, forced",
        a.d, a.n, a.delta, a.delta1
    );
    let run = match run_pipeline(&g, &cfg) {
        Ok(run) => run,
        Err(PipelineError::Stage { failure, .. }) => {
            eprintln!("stage {} failed: {}", failure.stage, failure.message);
            eprintln!("diagnostics: {}", failure.diagnostics);
            return Ok(ExitCode::from(1));
        }
        Err(e) => bail!(e),
    };
    log_timings(&run.timings);
    if let Some(dir) = a.out_dir.as_deref() {
        fs::create_dir_all(dir)?;
        write_graph(&g, Some(&dir.join("demo.el")))?;
        write_text(Some(&dir.join("demo.cert.json")), &run.certificate.to_json())?;
    }
    let problems = audit_certificate(&g, &run.certificate);
    let ratio = run.certificate.spectral.as_ref().map(|s| s.ratio());
    print_json(&json!({
        "n": g.n(),
        "d": a.d,
        "lambda_over_d": ratio,
        "cycle_len": run.crown.cycle.len(),
        "spikes": run.crown.spikes.len(),
        "verified": problems.is_empty(),
        "stages": run.certificate.stages.iter().map(|s| &s.stage).collect::<Vec<_>>(),
    }));
    Ok(if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
