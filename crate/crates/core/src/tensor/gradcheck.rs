//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |analytic|, |numeric|) over comparable coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// (input index, flat coordinate) pairs where the one-sided slopes disagree,
    /// i.e. the function has a kink there. These are excluded from the max.
    pub non_comparable: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol && self.checked > 0
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

/// Checks the gradient of scalar `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, xs| f(tape, xs[0]), std::slice::from_ref(x), eps, None)
}

/// Checks gradients of scalar `f` with respect to every tensor in `inputs`.
///
/// When `max_coords` is set, at most that many evenly spaced coordinates per
/// input are perturbed.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    check_eps(eps)?;
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.value().numel() != 1 {
            return Err(Error::contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                out.shape()
            )));
        }
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheckReport::default();
    let base = eval(inputs)?;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            work[which].data_mut()[c] = orig + eps;
            let plus = eval(&work)?;
            work[which].data_mut()[c] = orig - eps;
            let minus = eval(&work)?;
            work[which].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let forward = (plus - base) / eps;
            let backward = (base - minus) / eps;
            if (forward - backward).abs() > 1e-3 * numeric.abs().max(1.0) {
                report.non_comparable.push((which, c));
                continue;
            }
            let a = analytic[which].data()[c];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
