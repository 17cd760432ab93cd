//! Solver settings shared by `solve` and `bench`.

use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use anyhow::Result;
use clap::Args;
use concpd::solver::{CoupledProblem, LraOptions, SolveMode, SolveResult, SolverOptions};
use concpd::Execution;

use crate::config::Resolver;

pub const FACTORS_DIR: &str = "factors";
pub const RUN_FILE: &str = "run.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Full,
    Lra,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "lra" => Ok(Mode::Lra),
            _ => Err(format!("unknown mode {s:?} (expected full or lra)")),
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Lra => "lra",
        })
    }
}

/// A solver variant tag: `full`, `lra`, `full-nc` or `lra-nc`, where `-nc`
/// keeps the core weights fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub mode: Mode,
    pub update_core: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant {
            mode: Mode::Full,
            update_core: true,
        },
        Variant {
            mode: Mode::Lra,
            update_core: true,
        },
        Variant {
            mode: Mode::Full,
            update_core: false,
        },
        Variant {
            mode: Mode::Lra,
            update_core: false,
        },
    ];
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (mode, update_core) = match s.strip_suffix("-nc") {
            Some(m) => (m, false),
            None => (s, true),
        };
        Ok(Variant {
            mode: mode.parse()?,
            update_core,
        })
    }
}

impl Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}",
            self.mode,
            if self.update_core { "" } else { "-nc" }
        )
    }
}

#[derive(Args, Debug, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Stop once the relative error changes by less than this.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Cap on the extrapolation weight ratio, in (0, 1).
    #[arg(long)]
    pub delta_w: Option<f64>,
    /// Iterations between trace rows.
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// Compression rank per block in lra mode (defaults to the block rank).
    #[arg(long)]
    pub lra_rank: Option<usize>,
    #[arg(long)]
    pub lra_tol: Option<f64>,
    #[arg(long)]
    pub lra_max_iter: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SolveSettings {
    pub mode: Mode,
    pub update_core: bool,
    pub lra: LraOptions,
    pub max_iter: usize,
    pub tol: f64,
    pub delta_w: f64,
    pub seed: u64,
    pub trace_every: usize,
    pub serial: bool,
}

impl SolveSettings {
    pub fn resolve(
        r: &mut Resolver,
        args: SolverArgs,
        mode: Mode,
        update_core: bool,
        seed: u64,
        serial: bool,
    ) -> Result<Self> {
        let d = SolverOptions::default();
        let dl = LraOptions::default();
        Ok(Self {
            mode,
            update_core,
            max_iter: r.get("max_iter", args.max_iter, d.max_iter)?,
            tol: r.get("tol", args.tol, d.tol)?,
            delta_w: r.get("delta_w", args.delta_w, d.delta_w)?,
            trace_every: r.get("trace_every", args.trace_every, d.trace_every)?,
            lra: LraOptions {
                rank: r.get_opt("lra_rank", args.lra_rank)?,
                tol: r.get("lra_tol", args.lra_tol, dl.tol)?,
                max_iter: r.get("lra_max_iter", args.lra_max_iter, dl.max_iter)?,
            },
            seed,
            serial,
        })
    }

    pub fn apply(&self, problem: CoupledProblem) -> CoupledProblem {
        let mode = match self.mode {
            Mode::Full => SolveMode::Full,
            Mode::Lra => SolveMode::Lra(self.lra.clone()),
        };
        problem.with_mode(mode).with_core_updates(self.update_core)
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            delta_w: self.delta_w,
            seed: self.seed,
            trace_every: self.trace_every,
            execution: if self.serial {
                Execution::Sequential
            } else {
                Execution::default()
            },
        }
    }
}

/// `key: value` lines describing how a solve ended.
pub fn run_summary(result: &SolveResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "termination: {}", result.termination);
    let _ = writeln!(s, "iterations: {}", result.iterations);
    let _ = writeln!(s, "restarts: {}", result.restarts);
    let _ = writeln!(s, "rejected: {}", result.rejected);
    let _ = writeln!(s, "compression_s: {:.6}", result.compression_seconds);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(
            "lra-nc".parse::<Variant>().unwrap(),
            Variant {
                mode: Mode::Lra,
                update_core: false
            }
        );
        assert!("cpd".parse::<Variant>().is_err());
        assert!("full-nc-nc".parse::<Variant>().is_err());
    }
}
