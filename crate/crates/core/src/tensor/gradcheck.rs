//! Central finite-difference gradient checking in double precision.
//!
//! The checked graph is reduced to a scalar through a fixed, seeded random
//! weighting of its output so that ops whose plain sum is constant (softmax,
//! layer norm) still get a non-trivial probe. Numerical derivatives only ever
//! run the forward path; the reverse pass is what is under test.

use rand::Rng;

use crate::error::Result;
use crate::rng::seeded;

use super::{Tape, Tensor, Var};

/// Relative step: `h = STEP_SCALE · (1 + |x|)`.
pub const STEP_SCALE: f64 = 1e-4;
/// Entries whose absolute disagreement is below this floor always pass.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error among entries that did not pass via the absolute floor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Largest per-entry error after the floor rule (0 for floored entries).
    pub worst: f64,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.worst < rel_tol
    }
}

/// Builds the graph `f(inputs)` on a fresh tape, returns (weighted scalar
/// objective, handles of the inputs).
fn objective<F>(inputs: &[Tensor<f64>], weights: &[f64], f: &F, record: bool) -> Result<(Tape<f64>, Var, Vec<Var>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), record)).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(Tensor::new(shape, weights.to_vec())?);
    let weighted = tape.mul(out, w)?;
    let loss = tape.sum(weighted)?;
    Ok((tape, loss, vars))
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every entry of every input.
pub fn check<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    // Size the output weighting with a probe run.
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).len()
    };
    let mut rng = seeded(seed ^ 0x6772_6164);
    let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (tape, loss, vars) = objective(inputs, &weights, &f, true)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let (tape, loss, _) = objective(perturbed, &weights, &f, false)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        worst: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let h = STEP_SCALE * (1.0 + x.abs());
            work[i].data_mut()[j] = x + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs >= ABS_FLOOR {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = report.worst.max(rel);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
