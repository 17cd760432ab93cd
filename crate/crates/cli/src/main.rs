//! `concpd` command-line runner.
//!
//! ```text
//! concpd generate --n 2 --blocks 3 --snr-db 20 --seed 7 --out runs/a
//! concpd solve --problem runs/a --out runs/a/full --mode full
//! concpd eval --factors runs/a/full/factors --problem runs/a
//! concpd bench --sizes 2,3 --repeats 3 --out runs/bench
//! ```
//!
//! Every subcommand accepts `--config FILE` with flat `key = value` lines
//! using the long flag names (dashes become underscores); flags win over the
//! file. Each run writes the fully resolved settings to `config.resolved` in
//! its output directory. `RUN_THREADS` caps the worker threads.

mod bench;
mod config;
mod report;
mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use concpd::io;
use concpd::synth::{self, SynthSpec};

use crate::config::{List, Resolver};
use crate::settings::{Mode, SolveSettings, SolverArgs};

#[derive(Parser, Debug)]
#[command(
    name = "concpd",
    version,
    about = "Coupled nonnegative CP decomposition experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic coupled problem and its ground truth.
    Generate(GenerateArgs),
    /// Fit a coupled model to a problem on disk.
    Solve(SolveArgs),
    /// Run a size ladder of synthetic problems across solver variants.
    Bench(bench::BenchArgs),
    /// Score stored factors against the data and the ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Size factor: dims (8n, 9n, 10n), rank round(9n/2).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Signal-to-noise ratio in dB; `inf` writes clean tensors.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the tensor dimensions, e.g. `16,18,20`.
    #[arg(long)]
    dims: Option<List<usize>>,
    #[arg(long)]
    rank: Option<usize>,
    /// Coupled column count per mode, e.g. `5,5,0`.
    #[arg(long)]
    coupled: Option<List<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem directory or manifest file.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Keep the core weights fixed at one.
    #[arg(long)]
    no_core: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Run every kernel on the calling thread.
    #[arg(long)]
    serial: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model directory written by `solve`.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Ground-truth model directory; defaults to the problem's truth.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Problem whose tensors are compared against; without it the truth
    /// reconstructions are used.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Where to write the report; printed only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Stdout is informational; a closed pipe must not fail the run.
pub(crate) fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn path_setting(r: &mut Resolver, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
    let s = r.get_opt(key, flag.map(|p| p.display().to_string()))?;
    Ok(s.map(PathBuf::from))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_generate(args: GenerateArgs) -> Result<bool> {
    let mut r = Resolver::load(args.config.as_deref())?;
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        n: r.get("n", args.n, defaults.n)?,
        blocks: r.get("blocks", args.blocks, defaults.blocks)?,
        snr_db: r.get("snr_db", args.snr_db, defaults.snr_db)?,
        seed: r.get("seed", args.seed, defaults.seed)?,
        dims: r.get_opt("dims", args.dims)?.map(|l| l.0),
        rank: r.get_opt("rank", args.rank)?,
        coupled: r.get_opt("coupled", args.coupled)?.map(|l| l.0),
    };
    let out = path_setting(&mut r, "out", args.out)?.ok_or_else(|| anyhow!("--out is required"))?;
    let resolved = r.finish()?;

    let generated = synth::generate(&spec)?;
    create_dir(&out)?;
    config::write_resolved(&out, &resolved)?;
    let manifest = io::write_problem(&out, &generated.problem, Some(&generated.truth))
        .with_context(|| format!("writing problem to {}", out.display()))?;
    emit(&format!(
        "wrote {} tensors of dims {:?} (rank {}, coupled {:?}) to {}\n",
        manifest.tensors.len(),
        spec.dims(),
        spec.rank(),
        spec.coupled(),
        out.display()
    ));
    Ok(true)
}

fn cmd_solve(args: SolveArgs) -> Result<bool> {
    let mut r = Resolver::load(args.config.as_deref())?;
    let problem_path = path_setting(&mut r, "problem", args.problem)?
        .ok_or_else(|| anyhow!("--problem is required"))?;
    let out = path_setting(&mut r, "out", args.out)?.ok_or_else(|| anyhow!("--out is required"))?;
    let mode = r.get("mode", args.mode, Mode::Full)?;
    let update_core = r.get("update_core", args.no_core.then_some(false), true)?;
    let seed = r.get("seed", args.seed, 0)?;
    let serial = r.get("serial", args.serial.then_some(true), false)?;
    let settings = SolveSettings::resolve(&mut r, args.solver, mode, update_core, seed, serial)?;
    let resolved = r.finish()?;

    let loaded = io::read_problem(&problem_path)
        .with_context(|| format!("loading problem {}", problem_path.display()))?;
    create_dir(&out)?;
    config::write_resolved(&out, &resolved)?;

    let problem = settings.apply(loaded.problem);
    let result = concpd::solver::solve(&problem, &settings.options())?;

    io::write_model_set(&out.join(settings::FACTORS_DIR), &result.factors)?;
    report::write_trace(&out.join(report::TRACE_FILE), &result.trace)?;
    let mut metrics = report::evaluate(problem.tensors(), &result.factors, loaded.truth.as_ref())?;
    metrics.elapsed_seconds = result.elapsed_seconds;
    report::write_metrics(&out, &metrics, problem.order())?;
    let summary = settings::run_summary(&result);
    let path = out.join(settings::RUN_FILE);
    fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    emit(&format!("{summary}{}", metrics.to_kv()));
    Ok(true)
}

fn cmd_eval(args: EvalArgs) -> Result<bool> {
    let mut r = Resolver::load(args.config.as_deref())?;
    let factors = path_setting(&mut r, "factors", args.factors)?
        .ok_or_else(|| anyhow!("--factors is required"))?;
    let truth_path = path_setting(&mut r, "truth", args.truth)?;
    let problem_path = path_setting(&mut r, "problem", args.problem)?;
    let out = path_setting(&mut r, "out", args.out)?;
    let resolved = r.finish()?;

    let model = io::read_model_set(&factors)
        .with_context(|| format!("loading factors {}", factors.display()))?;
    let loaded = problem_path
        .as_deref()
        .map(|p| io::read_problem(p).with_context(|| format!("loading problem {}", p.display())))
        .transpose()?;
    let truth = match &truth_path {
        Some(p) => {
            Some(io::read_model_set(p).with_context(|| format!("loading truth {}", p.display()))?)
        }
        None => loaded.as_ref().and_then(|l| l.truth.clone()),
    };
    let originals = match (&loaded, &truth) {
        (Some(l), _) => l.problem.tensors().to_vec(),
        (None, Some(t)) => t.reconstruct_all()?,
        (None, None) => return Err(anyhow!("eval needs --truth or --problem")),
    };
    let metrics = report::evaluate(&originals, &model, truth.as_ref())?;
    if let Some(dir) = out {
        create_dir(&dir)?;
        config::write_resolved(&dir, &resolved)?;
        report::write_metrics(&dir, &metrics, model.order())?;
    }
    emit(&metrics.to_kv());
    Ok(true)
}

/// Applies `RUN_THREADS` to the global pool and returns the cap.
fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var("RUN_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("RUN_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(Some(n))
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let thread_cap = configure_threads()?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => bench::cmd_bench(a, thread_cap),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
