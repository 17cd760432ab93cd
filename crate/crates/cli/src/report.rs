//! Metric evaluation and CSV artifacts shared by the subcommands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use concpd::metrics::{self, MetricReport};
use concpd::solver::TraceRow;
use concpd::{CoupledFactorSet, DenseTensor};

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_KV: &str = "metrics.txt";
pub const METRICS_CSV: &str = "metrics.csv";

/// Scores `model` against `originals` and, when given, a ground-truth set.
///
/// A failing index (a rank-deficient estimate, or rank below 2) is reported
/// on stderr and recorded as NaN so the remaining metrics are still produced.
pub fn evaluate(
    originals: &[DenseTensor],
    model: &CoupledFactorSet,
    truth: Option<&CoupledFactorSet>,
) -> Result<MetricReport> {
    let recon = model.reconstruct_all()?;
    let rel_err = metrics::rel_err(originals, &recon)?;
    let obj_fun = 0.5
        * originals
            .iter()
            .zip(&recon)
            .map(|(a, b)| a.distance_sq(b))
            .sum::<concpd::Result<f64>>()?;
    let peak = originals
        .iter()
        .flat_map(|t| t.as_slice().iter().copied())
        .fold(0.0, f64::max);
    let psnr = if peak > 0.0 {
        Some(metrics::psnr(originals, &recon, peak)?)
    } else {
        None
    };
    let pi_per_mode = match truth {
        Some(t) => metrics::performance_index_per_mode(model, t).unwrap_or_else(|e| {
            eprintln!("warning: performance index unavailable: {e}");
            vec![f64::NAN; model.order()]
        }),
        None => Vec::new(),
    };
    Ok(MetricReport {
        rel_err,
        ten_fit: 1.0 - rel_err,
        obj_fun,
        pi_per_mode,
        elapsed_seconds: 0.0,
        psnr,
        mcc: None,
    })
}

pub fn write_metrics(dir: &Path, report: &MetricReport, order: usize) -> Result<()> {
    let kv = dir.join(METRICS_KV);
    fs::write(&kv, report.to_kv()).with_context(|| format!("writing {}", kv.display()))?;
    let csv = dir.join(METRICS_CSV);
    let text = format!(
        "{}\n{}\n",
        MetricReport::csv_header(order),
        report.to_csv_row()
    );
    fs::write(&csv, text).with_context(|| format!("writing {}", csv.display()))
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["iter", "objfun", "relerr", "elapsed_s"])?;
    for row in trace {
        w.write_record([
            row.iter.to_string(),
            format!("{:.10e}", row.objfun),
            format!("{:.10e}", row.relerr),
            format!("{:.6}", row.elapsed_s),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
