//! Plain-text formats.
//!
//! - `.dtt` tensor: a `dims: I1 .. IN` line, then the entries in storage
//!   order, whitespace separated.
//! - `.kt` model: `order:`, `rank:`, `dims:` and `lambda:` lines, then one
//!   `factor n:` block of `I_n` rows per mode.
//! - manifests: `key: value` lines. A model-set manifest lists the coupled
//!   counts and one `.kt` file per block; a problem manifest lists the
//!   tensors, ranks, coupled counts and optionally a truth model set.
//!
//! Numbers are written with 17 significant digits so values round-trip.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kruskal::{CoupledFactorSet, KruskalTensor};
use crate::solver::CoupledProblem;
use crate::tensor::{DenseTensor, Matrix};

pub const MODEL_MANIFEST: &str = "models.manifest";
pub const PROBLEM_MANIFEST: &str = "problem.manifest";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn push_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:.16e}");
    }
}

fn parse_f64s(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| parse_err(line, format!("{t:?}: {e}")))
        })
        .collect()
}

fn parse_usizes(s: &str, line: usize) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|e| parse_err(line, format!("{t:?}: {e}")))
        })
        .collect()
}

/// Non-empty lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn expect_key<'a>(item: Option<(usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (line, text) = item.ok_or_else(|| parse_err(0, format!("missing `{key}:` line")))?;
    let (k, v) = text
        .split_once(':')
        .ok_or_else(|| parse_err(line, format!("expected `{key}:`")))?;
    if k.trim() != key {
        return Err(parse_err(
            line,
            format!("expected `{key}:`, found `{}:`", k.trim()),
        ));
    }
    Ok((line, v.trim()))
}

pub fn format_dtt(t: &DenseTensor) -> String {
    let dims: Vec<String> = t.dims().iter().map(usize::to_string).collect();
    let mut out = format!("dims: {}\n", dims.join(" "));
    for chunk in t.as_slice().chunks(t.dims()[0].max(1)) {
        push_values(&mut out, chunk);
        out.push('\n');
    }
    out
}

pub fn parse_dtt(text: &str) -> Result<DenseTensor> {
    let mut lines = content_lines(text);
    let (line, dims) = expect_key(lines.next(), "dims")?;
    let dims = parse_usizes(dims, line)?;
    let mut data = Vec::with_capacity(dims.iter().product());
    for (line, l) in lines {
        data.extend(parse_f64s(l, line)?);
    }
    DenseTensor::new(dims, data).map_err(|e| parse_err(0, e.to_string()))
}

pub fn write_dtt(path: &Path, t: &DenseTensor) -> Result<()> {
    write_text(path, &format_dtt(t))
}

pub fn read_dtt(path: &Path) -> Result<DenseTensor> {
    parse_dtt(&read_text(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    }
}

pub fn format_kt(k: &KruskalTensor) -> String {
    let dims: Vec<String> = k.dims().iter().map(usize::to_string).collect();
    let mut out = format!(
        "order: {}\nrank: {}\ndims: {}\nlambda: ",
        k.order(),
        k.rank(),
        dims.join(" ")
    );
    push_values(&mut out, k.weights());
    out.push('\n');
    for (n, f) in k.factors().iter().enumerate() {
        let _ = writeln!(out, "factor {n}:");
        for i in 0..f.rows() {
            push_values(&mut out, &f.row(i));
            out.push('\n');
        }
    }
    out
}

pub fn parse_kt(text: &str) -> Result<KruskalTensor> {
    let mut lines = content_lines(text);
    let (line, order) = expect_key(lines.next(), "order")?;
    let order: usize = order
        .parse()
        .map_err(|e| parse_err(line, format!("order: {e}")))?;
    let (line, rank) = expect_key(lines.next(), "rank")?;
    let rank: usize = rank
        .parse()
        .map_err(|e| parse_err(line, format!("rank: {e}")))?;
    let (line, dims) = expect_key(lines.next(), "dims")?;
    let dims = parse_usizes(dims, line)?;
    if dims.len() != order {
        return Err(parse_err(
            line,
            format!("{} dims for order {order}", dims.len()),
        ));
    }
    let (line, lambda) = expect_key(lines.next(), "lambda")?;
    let weights = parse_f64s(lambda, line)?;
    if weights.len() != rank {
        return Err(parse_err(
            line,
            format!("{} weights for rank {rank}", weights.len()),
        ));
    }
    let mut factors = Vec::with_capacity(order);
    for (n, &rows) in dims.iter().enumerate() {
        let (line, rest) = expect_key(lines.next(), &format!("factor {n}"))?;
        if !rest.is_empty() {
            return Err(parse_err(line, "unexpected text after factor label"));
        }
        let mut values = Vec::with_capacity(rows * rank);
        for _ in 0..rows {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("factor {n} has fewer than {rows} rows")))?;
            let row = parse_f64s(l, line)?;
            if row.len() != rank {
                return Err(parse_err(
                    line,
                    format!("row has {} entries, expected {rank}", row.len()),
                ));
            }
            values.extend(row);
        }
        factors.push(Matrix::from_row_major(rows, rank, &values)?);
    }
    if let Some((line, _)) = lines.next() {
        return Err(parse_err(line, "trailing content after the last factor"));
    }
    KruskalTensor::new(factors, weights)
}

pub fn write_kt(path: &Path, k: &KruskalTensor) -> Result<()> {
    write_text(path, &format_kt(k))
}

pub fn read_kt(path: &Path) -> Result<KruskalTensor> {
    parse_kt(&read_text(path)?).map_err(|e| with_path(e, path))
}

fn join_usizes(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// `key: value` pairs of a manifest, keys in file order.
fn parse_manifest(text: &str) -> Result<Vec<(usize, String, String)>> {
    content_lines(text)
        .filter(|(_, l)| !l.starts_with('#'))
        .map(|(line, l)| {
            let (k, v) = l
                .split_once(':')
                .ok_or_else(|| parse_err(line, format!("expected `key: value`, got {l:?}")))?;
            Ok((line, k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn manifest_value<'a>(
    entries: &'a [(usize, String, String)],
    key: &str,
) -> Result<(usize, &'a str)> {
    entries
        .iter()
        .find(|(_, k, _)| k == key)
        .map(|(l, _, v)| (*l, v.as_str()))
        .ok_or_else(|| parse_err(0, format!("manifest lacks `{key}:`")))
}

fn block_file(s: usize, ext: &str) -> String {
    format!("block_{s:03}.{ext}")
}

/// Writes one `.kt` file per block plus [`MODEL_MANIFEST`] into `dir`.
pub fn write_model_set(dir: &Path, set: &CoupledFactorSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for (s, k) in set.to_kruskal_blocks().iter().enumerate() {
        let name = block_file(s, "kt");
        write_kt(&dir.join(&name), k)?;
        files.push(name);
    }
    let text = format!(
        "coupled: {}\nmodels: {}\n",
        join_usizes(&set.coupled_counts()),
        files.join(" ")
    );
    write_text(&dir.join(MODEL_MANIFEST), &text)
}

/// Reads a model set written by [`write_model_set`]; the shared prefixes
/// must agree across blocks.
pub fn read_model_set(dir: &Path) -> Result<CoupledFactorSet> {
    let path = dir.join(MODEL_MANIFEST);
    let entries = parse_manifest(&read_text(&path)?).map_err(|e| with_path(e, &path))?;
    let (line, coupled) = manifest_value(&entries, "coupled").map_err(|e| with_path(e, &path))?;
    let coupled = parse_usizes(coupled, line).map_err(|e| with_path(e, &path))?;
    let (_, models) = manifest_value(&entries, "models").map_err(|e| with_path(e, &path))?;
    let blocks = models
        .split_whitespace()
        .map(|f| read_kt(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    CoupledFactorSet::from_blocks(&blocks, &coupled)
}

/// On-disk description of a coupled problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemManifest {
    /// Tensor files relative to the manifest's directory.
    pub tensors: Vec<PathBuf>,
    pub ranks: Vec<usize>,
    pub coupled: Vec<usize>,
    /// Model-set directory relative to the manifest's directory.
    pub truth: Option<PathBuf>,
}

impl ProblemManifest {
    pub fn format(&self) -> String {
        let files: Vec<String> = self
            .tensors
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let mut out = format!(
            "tensors: {}\nranks: {}\ncoupled: {}\n",
            files.join(" "),
            join_usizes(&self.ranks),
            join_usizes(&self.coupled)
        );
        if let Some(t) = &self.truth {
            let _ = writeln!(out, "truth: {}", t.display());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_manifest(text)?;
        let (_, tensors) = manifest_value(&entries, "tensors")?;
        let (line, ranks) = manifest_value(&entries, "ranks")?;
        let ranks = parse_usizes(ranks, line)?;
        let (line, coupled) = manifest_value(&entries, "coupled")?;
        let coupled = parse_usizes(coupled, line)?;
        let truth = manifest_value(&entries, "truth")
            .ok()
            .filter(|(_, v)| !v.is_empty())
            .map(|(_, v)| PathBuf::from(v));
        Ok(Self {
            tensors: tensors.split_whitespace().map(PathBuf::from).collect(),
            ranks,
            coupled,
            truth,
        })
    }
}

/// Writes tensors, optional truth and [`PROBLEM_MANIFEST`] into `dir`.
pub fn write_problem(
    dir: &Path,
    problem: &CoupledProblem,
    truth: Option<&CoupledFactorSet>,
) -> Result<ProblemManifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tensors = Vec::new();
    for (s, t) in problem.tensors().iter().enumerate() {
        let name = PathBuf::from(block_file(s, "dtt"));
        write_dtt(&dir.join(&name), t)?;
        tensors.push(name);
    }
    let truth_dir = match truth {
        Some(set) => {
            write_model_set(&dir.join("truth"), set)?;
            Some(PathBuf::from("truth"))
        }
        None => None,
    };
    let manifest = ProblemManifest {
        tensors,
        ranks: problem.ranks().to_vec(),
        coupled: problem.coupled_counts().to_vec(),
        truth: truth_dir,
    };
    write_text(&dir.join(PROBLEM_MANIFEST), &manifest.format())?;
    Ok(manifest)
}

/// A problem loaded from disk with its optional ground truth.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub problem: CoupledProblem,
    pub truth: Option<CoupledFactorSet>,
    pub manifest: ProblemManifest,
}

/// Loads from a manifest file, or from a directory holding [`PROBLEM_MANIFEST`].
pub fn read_problem(path: &Path) -> Result<LoadedProblem> {
    let manifest_path = if path.is_dir() {
        path.join(PROBLEM_MANIFEST)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest = ProblemManifest::parse(&read_text(&manifest_path)?)
        .map_err(|e| with_path(e, &manifest_path))?;
    let tensors = manifest
        .tensors
        .iter()
        .map(|f| read_dtt(&base.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let problem = CoupledProblem::new(tensors, manifest.ranks.clone(), manifest.coupled.clone())?;
    let truth = match &manifest.truth {
        Some(dir) => Some(read_model_set(&base.join(dir))?),
        None => None,
    };
    Ok(LoadedProblem {
        problem,
        truth,
        manifest,
    })
}
