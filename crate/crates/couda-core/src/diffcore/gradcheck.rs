//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Tensor, Var};
use crate::error::{CoudaError, Result};

/// Relative error between an analytic and a numeric derivative,
/// |a - n| / max(|a|, |n|, 1e-8).
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between analytic gradients and central differences of
/// a plain scalar function over a flat coordinate vector. The closure is
/// evaluated 2 * len(x) times at x +/- h per coordinate.
pub fn max_rel_error_fd<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(x.len(), analytic.len());
    let mut xs = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs)?;
        xs[i] = orig - h;
        let fm = f(&xs)?;
        xs[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(CoudaError::domain(
                "grad_check",
                format!("non-finite function value near coordinate {}", i),
            ));
        }
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check of a scalar-valued tape function at `x`.
///
/// Builds the function once with a requires_grad leaf to obtain analytic
/// gradients, then compares against central differences with step `h`.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(&mut tape, leaf)?;
    let [r, c] = tape.shape(out);
    if (r, c) != (1, 1) {
        return Err(CoudaError::NonScalarLoss(vec![r, c]));
    }
    if !tape.scalar_value(out).is_finite() {
        return Err(CoudaError::domain("grad_check", "non-finite f(x)"));
    }
    // a constant output never reaches the tape's grad pass; its gradient
    // is identically zero
    match tape.backward(out) {
        Ok(()) | Err(CoudaError::NoTape) => {}
        Err(e) => return Err(e),
    }
    let analytic = tape.grad(leaf).expect("leaf requires grad").to_vec();

    let (rows, cols) = (x.rows, x.cols);
    max_rel_error_fd(
        |xs| {
            let mut t = Tape::new();
            let v = t.leaf(Tensor::new(rows, cols, xs.to_vec())?, false);
            let y = f(&mut t, v)?;
            Ok(t.scalar_value(y))
        },
        &x.data,
        &analytic,
        h,
    )
}
