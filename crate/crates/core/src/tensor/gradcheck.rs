use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Settings for [`finite_diff_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step `h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`,
    /// so gradients that are zero up to rounding compare absolutely.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

impl GradCheck {
    pub fn with_tol(tol: f64) -> Self {
        GradCheck {
            tol,
            ..GradCheck::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, element)` of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    /// Combines two reports, keeping the worse error.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let max_abs_err = self.max_abs_err.max(other.max_abs_err);
        let mut out = if other.max_rel_err > self.max_rel_err {
            other
        } else {
            self
        };
        out.checked = checked;
        out.max_abs_err = max_abs_err;
        out
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares the analytic gradient of the scalar function `f` against central
/// differences `(f(x+h) - f(x-h)) / 2h`, element by element, for every input.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], check: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).shape() != [1] {
        return Err(Error::contract("finite_diff_check needs a scalar function"));
    }
    g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
        tol: check.tol,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (e, &a) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[e];
            probe[i].data_mut()[e] = orig + check.step;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[e] = orig - check.step;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * check.step);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(check.floor);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, e);
            }
        }
    }
    Ok(report)
}
