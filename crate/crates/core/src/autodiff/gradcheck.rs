//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Maximum over all coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f32) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_coords(f, point, step, None)
}

/// Like [`grad_check`] but only on the listed coordinates when given.
pub fn grad_check_coords<F>(f: F, point: &Tensor, step: f32, coords: Option<&[usize]>) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, point)?;
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut worst = 0.0f32;
    for &i in coords {
        let mut probe = point.clone();
        probe.data_mut()[i] = point.data()[i] + step;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = point.data()[i] - step;
        let fm = eval(&f, &probe)?;
        let numeric = ((fp as f64 - fm as f64) / (2.0 * step as f64)) as f32;
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Gradient of `f` at `point` through the tape.
pub fn analytic_grad<F>(f: &F, point: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    check_scalar(&tape, y)?;
    let mut grads = tape.backward(y)?;
    Ok(grads
        .take(x)
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec())))
}

fn eval<F>(f: &F, point: &Tensor) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(point.clone());
    let y = f(&mut tape, x)?;
    check_scalar(&tape, y)?;
    Ok(tape.value(y).item())
}

fn check_scalar(tape: &Tape, y: Var) -> Result<()> {
    let v = tape.value(y);
    if v.len() != 1 {
        return Err(Error::dim(format!("gradient check needs a scalar, got {:?}", v.shape())));
    }
    if !v.item().is_finite() {
        return Err(Error::NonFinite("function value".into()));
    }
    Ok(())
}
