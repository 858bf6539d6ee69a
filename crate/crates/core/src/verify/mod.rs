//! Self-checks behind `clcsca check`: finite-difference gradients,
//! permutation symmetry and brute-force reference comparisons.

mod grad;
mod invariance;
mod oracle;

use serde::Serialize;

use crate::error::{Error, Result};

pub use grad::{network_gradient_check, op_gradient_checks, OP_NAMES};
pub use invariance::{attention_permutation_check, network_permutation_check};
pub use oracle::{geometry_oracle_checks, metric_oracle_checks};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Invariance,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Grad, Suite::Invariance, Suite::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::Invariance => "invariance",
            Suite::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check suite `{s}`")))
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckLine { name: name.into(), passed, detail: detail.into() }
    }
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub lines: Vec<CheckLine>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

/// Instances per differentiable op in the gradient suite.
pub const GRAD_INSTANCES: usize = 100;
/// Relative-error bound for single ops and attention blocks.
pub const OP_GRAD_TOL: f64 = 1e-4;
/// Relative-error bound for the end-to-end miniature network.
pub const NETWORK_GRAD_TOL: f64 = 1e-3;
/// Clouds per task in the invariance suite.
pub const INVARIANCE_CLOUDS: usize = 50;
pub const NETWORK_SYMMETRY_TOL: f64 = 1e-9;
pub const ATTENTION_SYMMETRY_TOL: f64 = 1e-12;
/// Random instances per primitive in the oracle suite.
pub const ORACLE_INSTANCES: usize = 200;

/// Runs one suite with the default sizes and tolerances.
pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    use crate::model::Task;
    let lines = match suite {
        Suite::Grad => {
            let mut lines: Vec<CheckLine> = op_gradient_checks(GRAD_INSTANCES, seed, OP_GRAD_TOL)?
                .into_iter()
                .map(|(name, r)| {
                    CheckLine::new(
                        format!("grad {name}"),
                        r.passed(),
                        format!("max rel err {:.2e} over {} entries (tol {:.0e})", r.max_rel_err, r.checked, r.tol),
                    )
                })
                .collect();
            for task in [Task::Classification, Task::Segmentation] {
                for standardize in [false, true] {
                    let r = network_gradient_check(task, standardize, seed, NETWORK_GRAD_TOL)?;
                    lines.push(CheckLine::new(
                        format!("grad network {task:?} standardize={standardize}"),
                        r.passed(),
                        format!("max rel err {:.2e} over {} weights (tol {:.0e})", r.max_rel_err, r.checked, r.tol),
                    ));
                }
            }
            lines
        }
        Suite::Invariance => {
            let mut lines = Vec::new();
            for task in [Task::Classification, Task::Segmentation] {
                let d = network_permutation_check(task, INVARIANCE_CLOUDS, seed)?;
                lines.push(CheckLine::new(
                    format!("permutation {task:?} logits"),
                    d <= NETWORK_SYMMETRY_TOL,
                    format!("max deviation {d:.2e} over {INVARIANCE_CLOUDS} clouds (tol {NETWORK_SYMMETRY_TOL:.0e})"),
                ));
            }
            for (name, d) in attention_permutation_check(INVARIANCE_CLOUDS, seed)? {
                lines.push(CheckLine::new(
                    format!("permutation {name}"),
                    d <= ATTENTION_SYMMETRY_TOL,
                    format!("max deviation {d:.2e} (tol {ATTENTION_SYMMETRY_TOL:.0e})"),
                ));
            }
            lines
        }
        Suite::Oracle => {
            let mut lines = geometry_oracle_checks(ORACLE_INSTANCES, seed)?;
            lines.extend(metric_oracle_checks(ORACLE_INSTANCES, seed)?);
            lines
        }
    };
    Ok(SuiteReport { suite, lines })
}
