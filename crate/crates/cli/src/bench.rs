//! Size-ladder benchmark: one solve per (size, variant, repeat).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use concpd::solver::SolveResult;
use concpd::synth::{self, SynthProblem, SynthSpec};
use rayon::prelude::*;

use crate::config::{self, List, Resolver};
use crate::report;
use crate::settings::{Mode, SolveSettings, SolverArgs, Variant};

pub const BENCH_FILE: &str = "bench.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNS_DIR: &str = "runs";

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Size factors, e.g. `2,3,4`.
    #[arg(long)]
    sizes: Option<List<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Subset of `full,lra,full-nc,lra-nc`.
    #[arg(long)]
    variants: Option<List<Variant>>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// Base seed; repeat `r` uses `seed + r` for both data and initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs executed at the same time (capped by RUN_THREADS).
    #[arg(long)]
    workers: Option<usize>,
    /// Single-threaded timing: one run at a time, sequential kernels.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

struct Job {
    n: usize,
    repeat: usize,
    variant: Variant,
}

struct Row {
    n: usize,
    variant: Variant,
    repeat: usize,
    pi: f64,
    tenfit: f64,
    time_s: f64,
    objfun: f64,
    failed: bool,
}

/// How the timings were taken, recorded next to the aggregates.
fn timing_label(serial: bool, workers: usize) -> &'static str {
    if workers > 1 {
        "concurrent"
    } else if serial {
        "serial"
    } else {
        "parallel-kernels"
    }
}

fn run_dir(out: &Path, job: &Job) -> PathBuf {
    out.join(RUNS_DIR)
        .join(format!("n{}_{}_r{}", job.n, job.variant, job.repeat))
}

fn run_job(
    job: &Job,
    data: &SynthProblem,
    base: &SolveSettings,
    seed: u64,
    dir: &Path,
) -> Result<(SolveResult, concpd::metrics::MetricReport)> {
    let settings = SolveSettings {
        mode: job.variant.mode,
        update_core: job.variant.update_core,
        seed,
        ..base.clone()
    };
    let problem = settings.apply(data.problem.clone());
    let result = concpd::solver::solve(&problem, &settings.options())?;
    let mut metrics = report::evaluate(problem.tensors(), &result.factors, Some(&data.truth))?;
    metrics.elapsed_seconds = result.elapsed_seconds;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    report::write_trace(&dir.join(report::TRACE_FILE), &result.trace)?;
    report::write_metrics(dir, &metrics, problem.order())?;
    Ok((result, metrics))
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["n", "variant", "repeat", "pi", "tenfit", "time_s", "objfun"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.variant.to_string(),
            r.repeat.to_string(),
            fmt(r.pi),
            fmt(r.tenfit),
            format!("{:.6}", r.time_s),
            fmt(r.objfun),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Means over the successful repeats of each (size, variant) pair.
fn write_summary(path: &Path, rows: &[Row], timing: &str) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "n", "variant", "runs", "failed", "pi", "tenfit", "time_s", "objfun", "timing",
    ])?;
    let mut keys: Vec<(usize, Variant)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.n, r.variant)) {
            keys.push((r.n, r.variant));
        }
    }
    for (n, variant) in keys {
        let group: Vec<&Row> = rows
            .iter()
            .filter(|r| r.n == n && r.variant == variant)
            .collect();
        let ok: Vec<&&Row> = group.iter().filter(|r| !r.failed).collect();
        let mean = |f: fn(&Row) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
            }
        };
        w.write_record([
            n.to_string(),
            variant.to_string(),
            group.len().to_string(),
            (group.len() - ok.len()).to_string(),
            fmt(mean(|r| r.pi)),
            fmt(mean(|r| r.tenfit)),
            format!("{:.6}", mean(|r| r.time_s)),
            fmt(mean(|r| r.objfun)),
            timing.to_string(),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn cmd_bench(args: BenchArgs, thread_cap: Option<usize>) -> Result<bool> {
    let mut r = Resolver::load(args.config.as_deref())?;
    let sizes = r.require("sizes", args.sizes)?.0;
    let repeats = r.require("repeats", args.repeats)?;
    let variants = r
        .get("variants", args.variants, List(Variant::ALL.to_vec()))?
        .0;
    let defaults = SynthSpec::default();
    let blocks = r.get("blocks", args.blocks, defaults.blocks)?;
    let snr_db = r.get("snr_db", args.snr_db, defaults.snr_db)?;
    let seed = r.get("seed", args.seed, 0u64)?;
    let serial = r.get("serial", args.serial.then_some(true), false)?;
    let requested = r.get("workers", args.workers, 1usize)?;
    let out = r
        .get_opt("out", args.out.map(|p| p.display().to_string()))?
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("--out is required"))?;
    let base = SolveSettings::resolve(&mut r, args.solver, Mode::Full, true, seed, serial)?;
    let resolved = r.finish()?;

    if sizes.is_empty() || repeats == 0 || variants.is_empty() {
        return Err(anyhow!("bench needs at least one size, repeat and variant"));
    }
    let mut workers = if serial { 1 } else { requested.max(1) };
    if let Some(cap) = thread_cap {
        workers = workers.min(cap);
    }
    let timing = timing_label(serial, workers);
    if workers > 1 {
        eprintln!("note: {workers} concurrent runs; times are flagged as concurrent");
    }

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    config::write_resolved(&out, &format!("{resolved}# timing: {timing}\n"))?;

    let mut jobs = Vec::new();
    let mut problems = Vec::new();
    for &n in &sizes {
        for repeat in 0..repeats {
            let spec = SynthSpec::new(n, blocks, snr_db, seed + repeat as u64);
            problems.push(synth::generate(&spec).with_context(|| format!("generating n={n}"))?);
            let data = problems.len() - 1;
            for &variant in &variants {
                jobs.push((Job { n, repeat, variant }, data));
            }
        }
    }

    let mut base = base;
    if workers > 1 {
        // runs already occupy the workers, so kernels stay on their thread
        base.serial = true;
    }
    let execute = |(job, data): &(Job, usize)| -> Row {
        let dir = run_dir(&out, job);
        let outcome = run_job(job, &problems[*data], &base, seed + job.repeat as u64, &dir);
        match outcome {
            Ok((result, metrics)) => Row {
                n: job.n,
                variant: job.variant,
                repeat: job.repeat,
                pi: metrics.pi_mean(),
                tenfit: metrics.ten_fit,
                time_s: result.elapsed_seconds,
                objfun: metrics.obj_fun,
                failed: false,
            },
            Err(e) => {
                eprintln!(
                    "run n={} variant={} repeat={} failed: {e:#}",
                    job.n, job.variant, job.repeat
                );
                Row {
                    n: job.n,
                    variant: job.variant,
                    repeat: job.repeat,
                    pi: f64::NAN,
                    tenfit: f64::NAN,
                    time_s: f64::NAN,
                    objfun: f64::NAN,
                    failed: true,
                }
            }
        }
    };
    let rows: Vec<Row> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building the bench pool")?;
        pool.install(|| jobs.par_iter().map(execute).collect())
    } else {
        jobs.iter().map(execute).collect()
    };

    write_rows(&out.join(BENCH_FILE), &rows)?;
    write_summary(&out.join(SUMMARY_FILE), &rows, timing)?;
    let failed = rows.iter().filter(|r| r.failed).count();
    crate::emit(&format!(
        "{} runs ({} failed), timing {timing}; results in {}\n",
        rows.len(),
        failed,
        out.display()
    ));
    Ok(failed == 0)
}
