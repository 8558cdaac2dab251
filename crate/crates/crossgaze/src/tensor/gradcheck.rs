//! Central-finite-difference gradient verification.
//!
//! Runs in 64-bit only; finite differences in 32-bit are dominated by
//! rounding noise.

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences at `x`.
///
/// Returns the maximum over coordinates of
/// `|analytic - (f(x+eps) - f(x-eps)) / 2eps| / max(1, |analytic|)`.
///
/// `coords` optionally restricts the sweep to a deterministic subset of
/// coordinates (every `ceil(n / coords)`-th index) to keep large parameter
/// tensors affordable.
pub fn grad_check<F>(mut f: F, x: &Tensor<f64>, eps: f64, coords: Option<usize>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let n = x.numel();
    let step = match coords {
        Some(c) if c > 0 && c < n => n.div_ceil(c),
        _ => 1,
    };
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < n {
        let fd = {
            let mut plus = x.clone();
            plus.data_mut()[i] += eps;
            let mut minus = x.clone();
            minus.data_mut()[i] -= eps;
            (eval_scalar(&mut f, &plus)? - eval_scalar(&mut f, &minus)?) / (2.0 * eps)
        };
        let a = analytic.data()[i];
        let rel = (a - fd).abs() / 1.0f64.max(a.abs());
        if rel > worst {
            worst = rel;
        }
        i += step;
    }
    Ok(worst)
}

fn eval_scalar<F>(f: &mut F, x: &Tensor<f64>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let loss = f(&mut tape, xv)?;
    tape.value(loss).item()
}
