mod eval;
mod manifest;
mod svg;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use augcycle::gradcheck::{run_suite, Corruption, TOLERANCE};
use augcycle::synth::{sample_paired, sample_unpaired, write_dataset, Dataset, Domain, JointSpec, TaskConfig};
use augcycle::trainer::{load_model, train_loop, ExperimentConfig};
use augcycle::checkpoint::Checkpoint;
use augcycle::{Error, Rng};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{run_op, test_set, EvalConfig, EvalOp};
use crate::manifest::{timestamp, RunManifest, MANIFEST_FILE};

const THREADS_ENV: &str = "AUGC_THREADS";

#[derive(Parser)]
#[command(name = "augcycle", version, about = "Train and evaluate cycle-consistent translation models on synthetic domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a dataset file sampled from a task.
    MakeData(MakeDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Start over in a directory that already holds a run.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Eval config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the eval `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Also write the report and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scales every analytic gradient by `1 + bias` (negative control).
    #[arg(long, hide = true)]
    corrupt_bias: Option<f64>,
}

#[derive(Args)]
struct MakeDataArgs {
    /// Dataset spec.
    #[arg(long)]
    config: PathBuf,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite an existing file.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum DataDomain {
    A,
    B,
    Paired,
}

fn default_domain() -> DataDomain {
    DataDomain::Paired
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSpec {
    task: TaskConfig,
    n: usize,
    #[serde(default = "default_domain")]
    domain: DataDomain,
    #[serde(default)]
    seed: u64,
}

/// Exit 2 for config and usage errors, 1 for failures while running.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Config-shaped errors are usage errors; everything else is a runtime one.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::Json(_) | Error::DimMismatch { .. } => usage(e),
        _ => runtime(e),
    }
}

fn read_json(path: &Path, what: &str) -> Result<serde_json::Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{what} {}: {e}", path.display())))
}

fn set_key(value: &mut serde_json::Value, key: &str, v: serde_json::Value) -> Result<(), Failure> {
    value
        .as_object_mut()
        .ok_or_else(|| usage("config must be a JSON object"))?
        .insert(key.into(), v);
    Ok(())
}

fn write_file(path: &Path, contents: &[u8], files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let started = timestamp();
    let mut value = read_json(&args.config, "config")?;
    if let Some(s) = args.seed {
        set_key(&mut value, "seed", s.into())?;
    }
    if let Some(o) = &args.out {
        set_key(&mut value, "out_dir", o.to_string_lossy().into_owned().into())?;
    }
    let config = ExperimentConfig::from_json(&value.to_string()).map_err(|e| usage(format!("config: {e}")))?;
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| usage("config: `out_dir` is required (set it or pass --out)"))?;
    if out.join(MANIFEST_FILE).exists() && args.resume.is_none() && !args.force {
        return Err(usage(format!(
            "{} already holds a run; pass --resume to continue or --force to start over",
            out.display()
        )));
    }
    let outcome = train_loop(&config, args.resume.as_deref()).map_err(classify)?;
    let mut files = Vec::new();
    let echo = serde_json::to_string_pretty(&config).map_err(runtime)?;
    write_file(&out.join("config.json"), format!("{echo}\n").as_bytes(), &mut files)?;
    files.extend(outcome.files);
    let config_value = serde_json::to_value(&config).map_err(runtime)?;
    RunManifest::new("train", config_value, started)
        .finish(&out, &files)
        .map_err(runtime)?;
    println!(
        "trained {} steps; final checkpoint {}",
        outcome.checkpoint.step,
        outcome.final_checkpoint_path.display()
    );
    Ok(())
}

fn eval_threads() -> Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let started = timestamp();
    let mut value = match &args.config {
        Some(p) => read_json(p, "eval config")?,
        None => serde_json::json!({}),
    };
    if let Some(s) = args.seed {
        set_key(&mut value, "seed", s.into())?;
    }
    let cfg: EvalConfig = serde_json::from_value(value).map_err(|e| usage(format!("eval config: {e}")))?;
    cfg.validate().map_err(|e| usage(format!("eval config: {e}")))?;
    let ck = Checkpoint::load(&args.checkpoint).map_err(runtime)?;
    let (_, spec, bundle) = load_model(&ck).map_err(classify)?;
    let ops = cfg.selected_ops(spec.task);
    if ops.contains(&EvalOp::Attributes) && spec.task != augcycle::synth::TaskKind::AttributeVector {
        return Err(usage("eval config: `ops` includes attributes but the checkpoint's task is style-mixture"));
    }
    let test = test_set(&cfg, &spec, &bundle).map_err(|e| match e {
        Error::Io(_) => usage(format!("eval config: `test_data`: {e}")),
        other => classify(other),
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads()?)
        .build()
        .map_err(runtime)?;
    let outputs: Vec<_> = pool.install(|| ops.par_iter().map(|&op| run_op(op, &cfg, &bundle, &spec, &test)).collect());

    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let mut report = augcycle::evaluation::EvalReport::default();
    let mut files = Vec::new();
    for (op, out) in ops.iter().zip(outputs) {
        let out = out.map_err(|e| runtime(format!("{}: {e}", op.name())))?;
        report.merge(out.report);
        for t in out.tables {
            write_file(&args.out.join(&t.file), t.to_csv().as_bytes(), &mut files)?;
        }
        for p in out.plots {
            write_file(&args.out.join(&p.file), svg::scatter(&p.title, &p.points).as_bytes(), &mut files)?;
        }
    }
    let json = report.to_json().map_err(runtime)?;
    write_file(&args.out.join("report.json"), format!("{json}\n").as_bytes(), &mut files)?;
    let finite = report.validate_finite();
    let echo = serde_json::json!({
        "checkpoint": args.checkpoint.to_string_lossy(),
        "checkpoint_step": ck.step,
        "eval": cfg,
    });
    RunManifest::new("eval", echo, started)
        .finish(&args.out, &files)
        .map_err(runtime)?;
    for (k, s) in &report.metrics {
        println!("{k}: {:.6} ± {:.6} (n = {})", s.mean, s.stderr, s.n);
    }
    for (k, v) in &report.scalars {
        println!("{k}: {v:.6}");
    }
    finite.map_err(runtime)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let started = timestamp();
    let corrupt = Corruption {
        bias: args.corrupt_bias.unwrap_or(0.0),
    };
    let report = run_suite(corrupt).map_err(runtime)?;
    for e in &report.entries {
        println!("{:<40} {:>5} coords  max rel error {:.3e}", e.name, e.coords, e.max_rel_error);
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "max relative error {:.3e} (tolerance {TOLERANCE:.0e}): {verdict}",
        report.max_rel_error
    );
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
        let mut files = Vec::new();
        let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
        write_file(&out.join("gradcheck.json"), format!("{json}\n").as_bytes(), &mut files)?;
        RunManifest::new("gradcheck", serde_json::json!({ "corrupt_bias": corrupt.bias }), started)
            .finish(out, &files)
            .map_err(runtime)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(runtime(format!("gradient check failed: {:.3e}", report.max_rel_error)))
    }
}

fn cmd_make_data(args: MakeDataArgs) -> Result<(), Failure> {
    let mut value = read_json(&args.config, "dataset spec")?;
    if let Some(s) = args.seed {
        set_key(&mut value, "seed", s.into())?;
    }
    let ds: DataSpec = serde_json::from_value(value).map_err(|e| usage(format!("dataset spec: {e}")))?;
    if ds.n == 0 {
        return Err(usage("dataset spec: `n` must be positive"));
    }
    if args.out.exists() && !args.force {
        return Err(usage(format!("{} exists; pass --force to overwrite", args.out.display())));
    }
    let spec = JointSpec::from_config(&ds.task).map_err(|e| usage(format!("dataset spec: `task`: {e}")))?;
    let mut rng = Rng::new(ds.seed);
    let data = match ds.domain {
        DataDomain::A => Dataset::Single(sample_unpaired(&spec, Domain::A, ds.n, &mut rng).map_err(runtime)?),
        DataDomain::B => Dataset::Single(sample_unpaired(&spec, Domain::B, ds.n, &mut rng).map_err(runtime)?),
        DataDomain::Paired => {
            let p = sample_paired(&spec, ds.n, &mut rng).map_err(runtime)?;
            Dataset::Paired { a: p.a, b: p.b }
        }
    };
    write_dataset(&args.out, &data).map_err(runtime)?;
    println!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::MakeData(a) => cmd_make_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
