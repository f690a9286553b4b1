//! `dualgraph` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dualgraph_core::breadth::{build_breadth_graph, merge_breadth_graphs, BreadthGraph};
use dualgraph_core::config::{AggregationMode, EmbedderKind, RunConfig};
use dualgraph_core::depth::{build_depth_graph, merge_depth_graphs, DepthGraph};
use dualgraph_core::embedding::{Embedder, HashEmbedder, HttpTransport, RemoteEmbedder};
use dualgraph_core::pipeline::{explain, CommandVerifier, Engine, Execution, FusionOutcome};
use dualgraph_core::query::Query;
use dualgraph_core::theorem::{estimate_risks, risk_table};
use dualgraph_core::trace::{parse_trace_file, validate_trace, Trace};

const EXIT_PARSE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_ABSTAIN: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "dualgraph",
    version,
    about = "Breadth/depth evidence graphs over agent traces"
)]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Signal,
    Subject,
}

impl From<ModeArg> for AggregationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Signal => AggregationMode::Signal,
            ModeArg::Subject => AggregationMode::Subject,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, validate and canonicalize trace files.
    Ingest {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Feed each input through this extractor program instead of parsing it directly.
        #[arg(long)]
        extractor: Option<String>,
    },
    /// Build breadth and depth graphs from traces.
    Build {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Answer a query over a graph pair.
    Query {
        #[arg(long)]
        query: PathBuf,
        #[arg(long, requires = "depth", conflicts_with = "trace")]
        breadth: Option<PathBuf>,
        #[arg(long, requires = "breadth", conflicts_with = "trace")]
        depth: Option<PathBuf>,
        /// Build both graphs from this trace instead of reading graph files.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print the evidence chain of an outcome file.
    Explain { outcome: PathBuf },
    /// Monte Carlo check of the fusion risk bounds on the configured scenario.
    VerifyTheorem,
    /// Summarize outcome files as a table.
    Report {
        #[arg(required = true)]
        outcomes: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    match cli.command {
        Command::Ingest { traces, extractor } => {
            let out = out_dir(&cli.out, &cfg.trace_dir, "traces");
            cmd_ingest(&traces, extractor.as_deref(), &out)
        }
        Command::Build { traces, mode } => {
            let out = out_dir(&cli.out, &cfg.graph_dir, "graphs");
            cmd_build(&cfg, &traces, mode.into(), &out)
        }
        Command::Query {
            query,
            breadth,
            depth,
            trace,
        } => {
            let out = out_dir(&cli.out, &cfg.out_dir, "out");
            let (b, d) = match (breadth, depth, trace) {
                (Some(b), Some(d), None) => (
                    BreadthGraph::from_bytes(&read(&b)?).with_context(|| b.display().to_string())?,
                    DepthGraph::from_bytes(&read(&d)?).with_context(|| d.display().to_string())?,
                ),
                (None, None, Some(t)) => {
                    let trace = match load_trace(&t)? {
                        Ok(trace) => trace,
                        Err(code) => return Ok(code),
                    };
                    (
                        build_breadth_graph(&trace, &cfg.aliases, &cfg.confidences()),
                        build_depth_graph(&trace).graph,
                    )
                }
                _ => bail!("query needs either --breadth and --depth, or --trace"),
            };
            cmd_query(&cfg, &b, &d, &query, &out)
        }
        Command::Explain { outcome } => {
            let outcome = FusionOutcome::from_bytes(&read(&outcome)?).with_context(|| outcome.display().to_string())?;
            let text = explain(&outcome);
            print!("{text}");
            if let Some(dir) = &cli.out {
                write_file(
                    &dir.join(format!("{}.explain.txt", outcome.question_id)),
                    text.as_bytes(),
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyTheorem => {
            let out = out_dir(&cli.out, &cfg.out_dir, "out");
            cmd_verify_theorem(&cfg, &out)
        }
        Command::Report { outcomes } => cmd_report(&outcomes, cli.out.as_deref()),
    }
}

fn out_dir(flag: &Option<PathBuf>, configured: &Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.clone()
        .or_else(|| configured.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Parses and validates one trace; the inner error is the exit code to use.
fn load_trace(path: &Path) -> Result<Result<Trace, ExitCode>> {
    let trace = match parse_trace_file(&read(path)?) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Ok(Err(ExitCode::from(EXIT_PARSE)));
        }
    };
    let violations = validate_trace(&trace);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{}: {v:?}", path.display());
        }
        return Ok(Err(ExitCode::from(EXIT_VALIDATION)));
    }
    Ok(Ok(trace))
}

fn cmd_ingest(paths: &[PathBuf], extractor: Option<&str>, out: &Path) -> Result<ExitCode> {
    let mut parse_failed = false;
    let mut invalid = false;
    let mut written = 0;
    for path in paths {
        let bytes = read(path)?;
        let parsed = match extractor {
            Some(program) => dualgraph_core::trace::run_extractor(program, &[], &bytes),
            None => parse_trace_file(&bytes),
        };
        let trace = match parsed {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                parse_failed = true;
                continue;
            }
        };
        let violations = validate_trace(&trace);
        if !violations.is_empty() {
            for v in &violations {
                eprintln!("{}: {v:?}", path.display());
            }
            invalid = true;
            continue;
        }
        write_file(
            &out.join(format!("{}.jsonl", trace.run_id)),
            &trace.to_canonical_bytes(),
        )?;
        written += 1;
    }
    eprintln!("ingested {written} of {} traces into {}", paths.len(), out.display());
    Ok(if parse_failed {
        ExitCode::from(EXIT_PARSE)
    } else if invalid {
        ExitCode::from(EXIT_VALIDATION)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_build(cfg: &RunConfig, paths: &[PathBuf], mode: AggregationMode, out: &Path) -> Result<ExitCode> {
    let mut traces = Vec::with_capacity(paths.len());
    for path in paths {
        match load_trace(path)? {
            Ok(t) => traces.push(t),
            Err(code) => return Ok(code),
        }
    }
    let conf = cfg.confidences();
    let mut breadth = Vec::new();
    let mut depth = Vec::new();
    for t in &traces {
        let build = build_depth_graph(t);
        write_file(
            &out.join(format!("{}.dropped.jsonl", t.run_id)),
            &build.dropped_report(),
        )?;
        eprintln!(
            "{}: depth admitted {} edges, dropped {}",
            t.run_id,
            build.graph.edges().len(),
            build.dropped.len()
        );
        breadth.push((t.run_id.clone(), build_breadth_graph(t, &cfg.aliases, &conf)));
        depth.push((t.run_id.clone(), build.graph));
    }
    match mode {
        AggregationMode::Signal => {
            for ((run, b), (_, d)) in breadth.iter().zip(&depth) {
                write_file(&out.join(format!("{run}.breadth.jsonl")), &b.to_bytes())?;
                write_file(&out.join(format!("{run}.depth.jsonl")), &d.to_bytes())?;
            }
        }
        AggregationMode::Subject => {
            let graphs: Vec<BreadthGraph> = breadth.into_iter().map(|(_, g)| g).collect();
            let merged = match merge_breadth_graphs(&graphs) {
                Ok(g) => g,
                Err(conflict) => {
                    eprintln!(
                        "merge conflict on label `{}`: nodes {} and {} have different kinds",
                        conflict.label, conflict.node_ids.0, conflict.node_ids.1
                    );
                    return Ok(ExitCode::from(EXIT_VALIDATION));
                }
            };
            let merged_depth = merge_depth_graphs(&depth)?;
            write_file(&out.join("subject.breadth.jsonl"), &merged.to_bytes())?;
            write_file(&out.join("subject.depth.jsonl"), &merged_depth.to_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder>> {
    Ok(match cfg.embedder {
        EmbedderKind::Reference => Box::new(HashEmbedder::new(cfg.embedding_dim)),
        EmbedderKind::Remote => {
            let endpoint = cfg.remote_endpoint.clone().context("remote_endpoint is not set")?;
            let mut client = RemoteEmbedder::new(endpoint, cfg.embedding_dim, HttpTransport);
            if let Some(cache) = &cfg.remote_cache {
                client = client.with_cache_file(cache).context("cannot load embedding cache")?;
            }
            Box::new(client)
        }
    })
}

fn cmd_query(
    cfg: &RunConfig,
    breadth: &BreadthGraph,
    depth: &DepthGraph,
    query: &Path,
    out: &Path,
) -> Result<ExitCode> {
    let query = Query::from_json(&read(query)?).with_context(|| query.display().to_string())?;
    let embedder = embedder(cfg)?;
    let verifier = cfg.verifier_command.as_ref().map(|cmd| CommandVerifier {
        program: cmd[0].clone(),
        args: cmd[1..].to_vec(),
    });
    let execution = if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let mut engine =
        Engine::new(breadth, depth, &query, cfg.hyperparams(), embedder.as_ref())?.with_execution(execution);
    if let Some(v) = &verifier {
        engine = engine.with_verifier(v);
    }
    let outcome = engine.run()?;
    write_file(
        &out.join(format!("{}.outcome.json", outcome.question_id)),
        &outcome.to_bytes(),
    )?;
    match &outcome.map_answer {
        Some(answer) => {
            println!("{answer}");
            Ok(ExitCode::SUCCESS)
        }
        None => {
            eprintln!("abstain: no answer is supported by either channel");
            Ok(ExitCode::from(EXIT_ABSTAIN))
        }
    }
}

fn cmd_verify_theorem(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let scenario = cfg.scenario();
    let report = estimate_risks(&scenario);
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_file(&out.join("risk_report.json"), &json)?;
    write_file(
        &out.join("risk_table.csv"),
        risk_table(&[(scenario, report.clone())]).as_bytes(),
    )?;
    print!("{}", String::from_utf8_lossy(&json));
    if report.bound_violations > 0 {
        eprintln!("{} pointwise bound violations", report.bound_violations);
        return Ok(ExitCode::from(EXIT_VALIDATION));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<ExitCode> {
    let mut rows = vec!["question_id,map_answer,p_calibrated,alpha,chain_edges,abstain".to_string()];
    for path in paths {
        let o = FusionOutcome::from_bytes(&read(path)?).with_context(|| path.display().to_string())?;
        let map = o.map_answer.clone().unwrap_or_default();
        let p = o
            .p_calibrated
            .as_ref()
            .and_then(|d| d.prob(&map))
            .map_or(String::new(), |p| format!("{p:.6}"));
        let alpha = o.alpha.map_or(String::new(), |a| format!("{a:.6}"));
        rows.push(format!(
            "{},{map},{p},{alpha},{},{}",
            o.question_id,
            o.chain.len(),
            o.abstain
        ));
    }
    let table = rows.join("\n") + "\n";
    print!("{table}");
    if let Some(dir) = out {
        write_file(&dir.join("report.csv"), table.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}
