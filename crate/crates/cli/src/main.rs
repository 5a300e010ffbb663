//! `graphmut`: run mutation campaigns and inspect their artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graphmut::backends::{execute, AdapterCommand, Backend, ExecutionTrace};
use graphmut::campaign::{
    campaign_input, read_jsonl, read_seed_dir, run_campaign_file, RESULTS_FILE, SEEDS_DIR,
};
use graphmut::engine::{legality_check, CampaignConfig, MutantRecord, SeedPool, ADAPTER_ENV};
use graphmut::ir::native::{model_hash, read_model, write_model};
use graphmut::ir::{generate_seed, InputSpec, SeedKind};
use graphmut::operators::{apply_seeded, MutationOperator, MutationSite, OperatorCode};
use graphmut::oracles::{layer_distance, rate_series, run_oracles, TraceSet};
use graphmut::stats::operator_stats;
use graphmut::{Error, GraphModel};

/// Exit codes: 0 success (for `fuzz`: defects found), 1 `fuzz` found
/// nothing, 2 configuration or usage error, 3 any other failure.
const EXIT_NONE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "graphmut", version, about = "Mutation-based differential testing of neural computation graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign described by a TOML config.
    Fuzz {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's mutant budget.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one operator at one site and write the mutant.
    Mutate {
        /// Model file (native JSON or .onnx) or `seed:KIND[:N]`.
        #[arg(long)]
        model: String,
        #[arg(long)]
        op: String,
        /// Node id, optionally `id:detail`.
        #[arg(long)]
        site: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Operator parameter override, `name=value`.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Output path; `.onnx` writes ONNX. Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one model on one backend and dump the trace as JSON.
    Exec {
        #[arg(long)]
        model: String,
        /// reference, optimized, faulty, external or external:CMD.
        #[arg(long)]
        backend: String,
        /// Adapter launch command for `external`.
        #[arg(long, env = ADAPTER_ENV)]
        adapter: Option<String>,
        /// Seed for the generated input.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two trace files layer by layer and run the oracles.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Model the traces came from; names layer kinds in reports.
        #[arg(long)]
        model: Option<String>,
        /// Campaign config supplying oracle thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print per-operator statistics for a campaign directory.
    Stats { dir: PathBuf },
    /// Rebuild mutants from lineage records and check their hashes.
    Replay {
        #[arg(long)]
        lineage: PathBuf,
        /// Only this mutant.
        #[arg(long)]
        id: Option<String>,
        /// Seed directory; defaults to `seeds/` next to the lineage file.
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// Directory to write rebuilt models into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn run(command: Command) -> graphmut::Result<u8> {
    match command {
        Command::Fuzz { config, budget, out } => fuzz(&config, budget, &out),
        Command::Mutate {
            model,
            op,
            site,
            seed,
            params,
            out,
        } => mutate(&model, &op, &site, seed, &params, out.as_deref()),
        Command::Exec {
            model,
            backend,
            adapter,
            seed,
            out,
        } => exec(&model, &backend, adapter.as_deref(), seed, out.as_deref()),
        Command::Compare { a, b, model, config } => compare(&a, &b, model.as_deref(), config.as_deref()),
        Command::Stats { dir } => stats(&dir),
        Command::Replay {
            lineage,
            id,
            seeds,
            out,
        } => replay(&lineage, id.as_deref(), seeds.as_deref(), out.as_deref()),
    }
}

/// A model path, or `seed:KIND[:N]` for a built-in generator.
fn load_model(spec: &str) -> graphmut::Result<GraphModel> {
    if let Some(rest) = spec.strip_prefix("seed:") {
        let (kind, n) = rest.split_once(':').unwrap_or((rest, "0"));
        let kind = SeedKind::from_name(kind).ok_or_else(|| Error::Config(format!("unknown seed kind `{kind}`")))?;
        let n = n
            .parse()
            .map_err(|_| Error::Config(format!("bad seed number `{n}`")))?;
        return Ok(generate_seed(kind, n));
    }
    read_model(Path::new(spec))
}

fn fuzz(config: &Path, budget: Option<usize>, out: &Path) -> graphmut::Result<u8> {
    let result = run_campaign_file(config, budget, out)?;
    let s = result.summary();
    println!(
        "{} mutants ({} legal), {} reports, {} unique defects",
        s.mutants, s.legal, s.reports, s.unique_defects
    );
    for d in &result.defects {
        println!("  {:<48} x{}", d.report.dedup_key, d.count);
    }
    if s.caps_exhausted {
        println!("every operator cap is spent");
    }
    println!("artifacts in {}", out.display());
    Ok(if result.exit_code() == 0 { 0 } else { EXIT_NONE })
}

fn mutate(
    model: &str,
    op: &str,
    site: &str,
    seed: u64,
    params: &[String],
    out: Option<&Path>,
) -> graphmut::Result<u8> {
    let model = load_model(model)?;
    let code: OperatorCode = op.parse()?;
    let mut op = MutationOperator::new(code);
    for p in params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("parameter `{p}` is not name=value")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Config(format!("parameter `{p}` has a non-numeric value")))?;
        op = op.with_param(k, v)?;
    }
    let site: MutationSite = site.parse()?;
    let outcome = apply_seeded(&model, &op, &site, seed)?;
    for r in &outcome.repair_log {
        eprintln!(
            "repair: {} {} between {} and {} ({:?} -> {:?})",
            r.node_id,
            r.kind.name(),
            r.producer,
            r.consumer,
            r.from,
            r.to
        );
    }
    match out {
        Some(path) => {
            write_model(path, &outcome.model)?;
            eprintln!("wrote {} ({})", path.display(), model_hash(&outcome.model));
        }
        None => println!("{}", graphmut::ir::native::to_native(&outcome.model)),
    }
    Ok(0)
}

fn exec(model: &str, backend: &str, adapter: Option<&str>, seed: u64, out: Option<&Path>) -> graphmut::Result<u8> {
    let model = load_model(model)?;
    let backend = if backend == "external" {
        let cmd = adapter.ok_or_else(|| Error::Config(format!("`external` needs --adapter or {ADAPTER_ENV}")))?;
        Backend::External(AdapterCommand::parse(cmd)?)
    } else {
        backend.parse()?
    };
    let cfg = CampaignConfig::default();
    let trace = execute(&backend, &model, &campaign_input(&model, seed), &cfg.capture())?;
    let text = serde_json::to_string_pretty(&trace)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    if let Some((stage, sig)) = trace.crash() {
        eprintln!("{} crashed at {}: {sig}", trace.backend_id, stage.name());
    }
    Ok(0)
}

fn read_trace(path: &Path) -> graphmut::Result<ExecutionTrace> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn compare(a: &Path, b: &Path, model: Option<&str>, config: Option<&Path>) -> graphmut::Result<u8> {
    let cfg = match config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    let ta = read_trace(a)?;
    let mut tb = read_trace(b)?;
    if tb.backend_id == ta.backend_id {
        tb.backend_id.push_str("#2");
    }
    let d = layer_distance(&ta, &tb)?;
    let r = rate_series(&d, &cfg.oracle);
    println!("{:<24} {:>14} {:>14}", "layer", "D", "R");
    for ld in &d.values {
        let rate = r.values.iter().find(|x| x.node == ld.node).map(|x| x.r);
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
        println!("{:<24} {:>14} {:>14}", ld.node, fmt(ld.d), fmt(rate));
    }
    let traces: TraceSet = [ta, tb].into_iter().map(|t| (t.backend_id.clone(), t)).collect();
    let legality = legality_check(&traces, &cfg)?;
    println!("legality: {legality}");
    if legality.is_legal() {
        let model = match model {
            Some(m) => load_model(m)?,
            None => GraphModel::new(
                "unknown",
                InputSpec {
                    name: "input".into(),
                    shape: Vec::new(),
                },
            ),
        };
        let reports = run_oracles(&traces, &model, "-", &cfg.oracle);
        if reports.is_empty() {
            println!("no defect");
        }
        for rep in reports {
            println!("defect: {} ({})", rep.dedup_key, rep.taxonomy_id.describe());
        }
    }
    Ok(0)
}

fn stats(dir: &Path) -> graphmut::Result<u8> {
    let results = read_jsonl(&dir.join(RESULTS_FILE))?;
    print!("{}", operator_stats(&results).render());
    Ok(0)
}

fn replay(lineage: &Path, id: Option<&str>, seeds: Option<&Path>, out: Option<&Path>) -> graphmut::Result<u8> {
    let records: Vec<MutantRecord> = read_jsonl(lineage)?;
    let seed_dir = match seeds {
        Some(s) => s.to_path_buf(),
        None => lineage.parent().unwrap_or_else(|| Path::new(".")).join(SEEDS_DIR),
    };
    let pool: SeedPool = read_seed_dir(&seed_dir)?;
    let chosen: Vec<&MutantRecord> = records.iter().filter(|r| id.is_none_or(|i| r.id == i)).collect();
    if chosen.is_empty() {
        return Err(Error::Config(match id {
            Some(i) => format!("no lineage record `{i}`"),
            None => "lineage file is empty".into(),
        }));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut drift = 0;
    for rec in chosen {
        let model = graphmut::engine::replay(rec, &pool)?;
        let hash = model_hash(&model);
        let ok = hash == rec.model_hash;
        println!("{} {} {}", rec.id, if ok { "ok" } else { "MISMATCH" }, hash);
        drift += usize::from(!ok);
        if let Some(dir) = out {
            write_model(&dir.join(format!("{}.json", rec.id)), &model)?;
        }
    }
    Ok(if drift == 0 { 0 } else { EXIT_FAILURE })
}
