//! `hppl`: check models, run the static verifiers, infer, compare against the
//! enumeration oracle, and benchmark sweeps. Exit codes: 0 success, 1 semantic
//! failure (bad model, violation, verdict under --strict, tolerance breach),
//! 2 environment failure (I/O, data, flags).

use clap::{Args, Parser, Subcommand};
use hppl_core::lang::{self, CheckedProgram, IntExpr, Stmt, StmtKind};
use hppl_core::report::{AnalyzeReport, InferReport};
use hppl_core::runtime::{
    enumerate, run, DataTable, EngineKind, InferError, RunConfig, RunResult, SampledVar,
};
use hppl_core::verify::{analyze_division, analyze_memory, MemConfig, MemoryVerdict};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "hppl", version, about = "Hybrid symbolic/particle inference toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model
    Check {
        model: PathBuf,
        /// Override an integer constant, e.g. --set N=100
        #[arg(long = "set", value_name = "NAME=INT")]
        set: Vec<String>,
    },
    /// Verify exact annotations and memory boundedness
    Analyze {
        model: PathBuf,
        #[arg(long = "set", value_name = "NAME=INT")]
        set: Vec<String>,
        /// Exit 1 unless every annotation is Verified and memory is Bounded
        #[arg(long)]
        strict: bool,
        /// Largest certifiable consumption distance, in loop iterations
        #[arg(long, default_value_t = 3)]
        m_max: usize,
        #[arg(long)]
        json: bool,
    },
    /// Run particle inference and print the posterior
    Infer(InferArgs),
    /// Enumerate the exact posterior; optionally grade an `infer --json` output
    Oracle {
        model: PathBuf,
        /// CSV with one column per model parameter
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "set", value_name = "NAME=INT")]
        set: Vec<String>,
        /// JSON document written by `infer --json`
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Largest accepted absolute error under --compare
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Sweep a model directory over engines, sizes, and seeds into a CSV
    Bench(BenchArgs),
}

#[derive(Args)]
struct InferArgs {
    model: PathBuf,
    /// CSV with one column per model parameter
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EngineArg::Ssi)]
    engine: EngineArg,
    #[arg(long, default_value_t = 1000)]
    particles: usize,
    /// Defaults to HYBRID_INFER_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
    /// Resample when ESS drops below this fraction of the particle count
    #[arg(long, default_value_t = 0.5)]
    resample_threshold: f64,
    #[arg(long = "set", value_name = "NAME=INT")]
    set: Vec<String>,
    /// Run particles on one thread (the result is identical either way)
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of .hppl models; data is read from <dir>/data/<model>.csv
    /// when present and synthesized or extended otherwise
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ssi")]
    engines: Vec<EngineArg>,
    /// Constant sweep, e.g. N=10,100,1000
    #[arg(long, value_name = "NAME=INT,INT,..")]
    sweep: Option<String>,
    #[arg(long, default_value_t = 1000)]
    particles: usize,
    /// Number of seeds per configuration, running seeds 0..k
    #[arg(long, default_value_t = 1, value_name = "K")]
    seeds: u64,
    /// Output CSV path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EngineArg {
    Ssi,
    Ds,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> EngineKind {
        match e {
            EngineArg::Ssi => EngineKind::Ssi,
            EngineArg::Ds => EngineKind::Ds,
        }
    }
}

enum Failure {
    Semantic(String),
    Environment(String),
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Command::Check { model, set } => cmd_check(model, set),
        Command::Analyze {
            model,
            set,
            strict,
            m_max,
            json,
        } => cmd_analyze(model, set, *strict, *m_max, *json),
        Command::Infer(args) => cmd_infer(args),
        Command::Oracle {
            model,
            data,
            set,
            compare,
            tol,
        } => cmd_oracle(model, data, set, compare, *tol),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Semantic(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Environment(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn environment(prefix: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Environment(format!("{}: {e}", prefix.display()))
}

fn parse_sets(pairs: &[String]) -> Result<BTreeMap<String, i64>, Failure> {
    let mut out = BTreeMap::new();
    for p in pairs {
        let (name, value) = p
            .split_once('=')
            .ok_or_else(|| Failure::Environment(format!("--set expects NAME=INT, got `{p}`")))?;
        let v: i64 = value.trim().parse().map_err(|_| {
            Failure::Environment(format!("--set {name}: `{value}` is not an integer"))
        })?;
        out.insert(name.trim().to_string(), v);
    }
    Ok(out)
}

fn load_model(path: &Path, set: &[String]) -> Result<CheckedProgram, Failure> {
    let overrides = parse_sets(set)?;
    let src = std::fs::read_to_string(path).map_err(|e| environment(path, e))?;
    lang::load(&src, &overrides)
        .map_err(|e| Failure::Semantic(format!("{}: {e}", path.display())))
}

fn load_data(path: &Option<PathBuf>) -> Result<DataTable, Failure> {
    match path {
        None => Ok(DataTable::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| environment(p, e))?;
            DataTable::from_csv(&text).map_err(|e| environment(p, e))
        }
    }
}

/// 17 significant digits, enough to reproduce the f64 bit pattern.
fn big(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_check(model: &Path, set: &[String]) -> CmdResult {
    let cp = load_model(model, set)?;
    println!(
        "ok: {} ({} sample sites, {} observe sites)",
        cp.program.name,
        cp.info.sample_sites.len(),
        cp.info.observe_sites.len()
    );
    Ok(0)
}

fn cmd_analyze(model: &Path, set: &[String], strict: bool, m_max: usize, json: bool) -> CmdResult {
    let cp = load_model(model, set)?;
    let division = analyze_division(&cp);
    let memory = analyze_memory(
        &cp,
        &MemConfig {
            m_max,
            ..MemConfig::default()
        },
    );

    let doc = AnalyzeReport::new(&cp, &division, &memory);
    if json {
        println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    } else {
        for row in &doc.exact {
            match (&row.reason, row.verdict) {
                (Some(at), _) => println!("{}: Refuted at {at}", row.var),
                (None, "verified") => println!("{}: Verified", row.var),
                (None, _) => println!("{}: Unknown", row.var),
            }
        }
        match &memory {
            MemoryVerdict::Bounded { bound, m } => println!("memory: Bounded({bound}, m={m})"),
            MemoryVerdict::Unbounded { witness_var, .. } => {
                println!("memory: Unbounded(witness {witness_var})")
            }
            MemoryVerdict::Unknown => println!("memory: Unknown"),
        }
    }

    let clean = division.all_verified() && matches!(memory, MemoryVerdict::Bounded { .. });
    if strict && !clean {
        return Ok(1);
    }
    Ok(0)
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("HYBRID_INFER_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Failure::Environment(format!("HYBRID_INFER_SEED: `{v}` is not an unsigned integer"))
        }),
        Err(_) => Ok(0),
    }
}

fn infer_failure(e: InferError) -> Failure {
    match e {
        InferError::MissingData { .. } | InferError::DataRange { .. } => {
            Failure::Environment(e.to_string())
        }
        other => Failure::Semantic(other.to_string()),
    }
}

fn sampled_label(s: &SampledVar) -> String {
    match s.iteration {
        Some(i) => format!("{} ({}, iteration {i})", s.var, s.stmt),
        None => format!("{} ({})", s.var, s.stmt),
    }
}

fn print_infer(r: &RunResult, json: bool) {
    if json {
        let doc = InferReport::new(r);
        println!("{}", serde_json::to_string_pretty(&doc).unwrap());
        return;
    }
    println!("posterior_mean {}", big(r.posterior.mean));
    println!("posterior_var {}", big(r.posterior.var));
    println!("log_evidence {}", big(r.log_evidence));
    println!("components {}", r.posterior.components.len());
    if r.diagnostics.sampled_vars.is_empty() {
        println!("sampled_vars none");
    } else {
        let labels: Vec<String> = r.diagnostics.sampled_vars.iter().map(sampled_label).collect();
        println!("sampled_vars {}", labels.join(", "));
    }
    println!("peak_live {}", r.diagnostics.peak_live);
    let trace: Vec<String> = r.diagnostics.live_trace.iter().map(|n| n.to_string()).collect();
    println!("live_trace {}", trace.join(" "));
}

fn cmd_infer(a: &InferArgs) -> CmdResult {
    let cp = load_model(&a.model, &a.set)?;
    let data = load_data(&a.data)?;
    let cfg = RunConfig {
        engine: a.engine.into(),
        particles: a.particles,
        seed: resolve_seed(a.seed)?,
        resample_threshold: a.resample_threshold,
        parallel: !a.serial,
    };
    let result = run(&cp, &data, &cfg).map_err(infer_failure)?;
    print_infer(&result, a.json);
    if let Some(report) = result.exact_violation_report() {
        eprintln!("{report}");
        return Ok(1);
    }
    Ok(0)
}

fn cmd_oracle(
    model: &Path,
    data: &Option<PathBuf>,
    set: &[String],
    compare: &Option<PathBuf>,
    tol: f64,
) -> CmdResult {
    let cp = load_model(model, set)?;
    let table = load_data(data)?;
    let oracle = enumerate(&cp, &table, 20).map_err(infer_failure)?;
    println!("oracle_mean {}", big(oracle.posterior.mean));
    println!("oracle_var {}", big(oracle.posterior.var));
    println!("log_evidence {}", big(oracle.log_evidence));
    println!("assignments {}", oracle.assignments);

    if let Some(path) = compare {
        let text = std::fs::read_to_string(path).map_err(|e| environment(path, e))?;
        let doc: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| environment(path, e))?;
        let mean = doc
            .pointer("/posterior/mean")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| environment(path, "no posterior.mean field"))?;
        let log_evidence = doc
            .pointer("/log_evidence")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| environment(path, "no log_evidence field"))?;
        let mean_error = (mean - oracle.posterior.mean).abs();
        let le_error = (log_evidence - oracle.log_evidence).abs();
        println!("mean_error {}", big(mean_error));
        println!("log_evidence_error {}", big(le_error));
        if mean_error <= tol && le_error <= tol {
            println!("within tolerance {}", big(tol));
        } else {
            println!("exceeds tolerance {}", big(tol));
            return Ok(1);
        }
    }
    Ok(0)
}

struct BenchRow {
    model: String,
    engine: String,
    n: i64,
    particles: usize,
    seed: u64,
    peak_live: usize,
    wall_ms: f64,
    posterior_mean: f64,
    posterior_var: f64,
    log_evidence: f64,
}

/// Longest data prefix any run can touch: loop upper bounds and literal
/// indices, with names resolved through the constant table.
fn data_len_needed(cp: &CheckedProgram) -> usize {
    fn int_max(e: &IntExpr, consts: &BTreeMap<String, i64>, max: &mut i64) {
        match e {
            IntExpr::Lit(v) => *max = (*max).max(*v),
            IntExpr::Name(n) => {
                if let Some(v) = consts.get(n) {
                    *max = (*max).max(*v);
                }
            }
        }
    }
    fn walk(stmts: &[Stmt], consts: &BTreeMap<String, i64>, max: &mut i64) {
        for s in stmts {
            match &s.kind {
                StmtKind::Observe { datum, .. } => int_max(&datum.index, consts, max),
                StmtKind::If {
                    then_branch,
                    else_branch,
                    ..
                } => {
                    walk(then_branch, consts, max);
                    walk(else_branch, consts, max);
                }
                StmtKind::For { lo, hi, body, .. } => {
                    int_max(lo, consts, max);
                    int_max(hi, consts, max);
                    walk(body, consts, max);
                }
                StmtKind::Sample { .. } => {}
            }
        }
    }
    let mut max = 1i64;
    walk(&cp.program.body, &cp.program.consts, &mut max);
    max.max(1) as usize
}

fn synth_value(j: usize) -> f64 {
    (j as f64 * 0.7).sin() * 1.5 + 0.2
}

/// Loads <dir>/data/<stem>.csv when present, then pads every parameter
/// column deterministically up to the length the program can index.
fn bench_data(cp: &CheckedProgram, dir: &Path, stem: &str) -> Result<DataTable, Failure> {
    let mut table = DataTable::new();
    let side = dir.join("data").join(format!("{stem}.csv"));
    if side.is_file() {
        let text = std::fs::read_to_string(&side).map_err(|e| environment(&side, e))?;
        table = DataTable::from_csv(&text).map_err(|e| environment(&side, e))?;
    }
    let needed = data_len_needed(cp);
    for param in &cp.program.params {
        let mut col: Vec<f64> = table
            .columns()
            .find(|(name, _)| *name == param.as_str())
            .map(|(_, vals)| vals.to_vec())
            .unwrap_or_default();
        if col.len() < needed {
            for j in col.len()..needed {
                col.push(synth_value(j));
            }
            table.insert(param.clone(), col);
        }
    }
    Ok(table)
}

fn parse_sweep(s: &str) -> Result<(String, Vec<i64>), Failure> {
    let (name, list) = s.split_once('=').ok_or_else(|| {
        Failure::Environment(format!("--sweep expects NAME=INT,INT,.., got `{s}`"))
    })?;
    let mut values = Vec::new();
    for part in list.split(',') {
        let v: i64 = part.trim().parse().map_err(|_| {
            Failure::Environment(format!("--sweep {name}: `{part}` is not an integer"))
        })?;
        values.push(v);
    }
    Ok((name.trim().to_string(), values))
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let sweep = a.sweep.as_deref().map(parse_sweep).transpose()?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.models)
        .map_err(|e| environment(&a.models, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "hppl"))
        .collect();
    paths.sort();

    let mut rows: Vec<BenchRow> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for path in &paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let src = match std::fs::read_to_string(path) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("{stem}: {e}"));
                continue;
            }
        };
        let sizes: Vec<Option<i64>> = match &sweep {
            Some((_, values)) => values.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        for n_opt in sizes {
            let mut overrides = BTreeMap::new();
            if let (Some((name, _)), Some(n)) = (&sweep, n_opt) {
                overrides.insert(name.clone(), n);
            }
            let cp = match lang::load(&src, &overrides) {
                Ok(cp) => cp,
                Err(e) => {
                    failures.push(format!("{stem}: {e}"));
                    continue;
                }
            };
            let n_col = n_opt
                .or_else(|| cp.program.consts.get("N").copied())
                .unwrap_or(0);
            let data = bench_data(&cp, &a.models, &stem)?;
            for engine in &a.engines {
                let kind: EngineKind = (*engine).into();
                for seed in 0..a.seeds {
                    let cfg = RunConfig {
                        engine: kind,
                        particles: a.particles,
                        seed,
                        ..RunConfig::default()
                    };
                    let started = Instant::now();
                    match run(&cp, &data, &cfg) {
                        Ok(r) => rows.push(BenchRow {
                            model: stem.clone(),
                            engine: kind.to_string(),
                            n: n_col,
                            particles: a.particles,
                            seed,
                            peak_live: r.diagnostics.peak_live,
                            wall_ms: started.elapsed().as_secs_f64() * 1e3,
                            posterior_mean: r.posterior.mean,
                            posterior_var: r.posterior.var,
                            log_evidence: r.log_evidence,
                        }),
                        Err(e) => {
                            failures.push(format!("{stem} {kind} N={n_col} seed={seed}: {e}"))
                        }
                    }
                }
            }
        }
    }
    rows.sort_by(|x, y| {
        (&x.model, &x.engine, x.n, x.seed).cmp(&(&y.model, &y.engine, y.n, y.seed))
    });

    let mut out =
        String::from("model,engine,N,particles,seed,peak_live,wall_ms,posterior_mean,posterior_var,log_evidence\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3},{},{},{}\n",
            r.model,
            r.engine,
            r.n,
            r.particles,
            r.seed,
            r.peak_live,
            r.wall_ms,
            big(r.posterior_mean),
            big(r.posterior_var),
            big(r.log_evidence)
        ));
    }
    match &a.out {
        Some(p) => std::fs::write(p, &out).map_err(|e| environment(p, e))?,
        None => print!("{out}"),
    }
    for f in &failures {
        eprintln!("skip: {f}");
    }
    if failures.is_empty() {
        Ok(0)
    } else {
        Ok(1)
    }
}
