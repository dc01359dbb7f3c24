use alloc::vec::Vec;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max(|a - n| - noise, 0) / max(|a|, |n|, floor)` per coordinate.
    /// The floor is `1e-6 · max|n| + 1e-12`, so coordinates with a vanishing
    /// gradient are judged on the scale of the whole gradient. `noise` is
    /// the rounding error of the difference quotient, `64 ε |f| / step`.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks the gradient of the scalar function `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(xv)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| alloc::vec![0.0; x.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t, false);
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        value
            .item()
            .ok_or_else(|| Error::NonScalarLoss(value.shape().to_vec()))
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut noise = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        numeric.push((fp - fm) / (2.0 * step));
        noise.push(64.0 * f64::EPSILON * fp.abs().max(fm.abs()) / step);
    }

    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale + 1e-12;
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .zip(&noise)
        .map(|((a, n), r)| ((a - n).abs() - r).max(0.0) / a.abs().max(n.abs()).max(floor))
        .collect();
    let max_rel_error = rel_errors.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// `Σ out ⊙ r` for a fixed random `r`; turns any output into a scalar
/// whose gradient exercises every output coordinate.
pub fn projection_loss(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut r = rng::seeded(seed);
    let n: usize = shape.iter().product();
    let weights = Tensor::new(&shape, (0..n).map(|_| rng::normal(&mut r)).collect())?;
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum_all(prod)
}
