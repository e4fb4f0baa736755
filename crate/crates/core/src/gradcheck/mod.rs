//! Central-difference verification of tape gradients (64-bit).

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Graph, OpKind, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

mod suite;

pub use suite::{layer_suite, SuiteRow, SUITE, MAX_ATTEMPTS};

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1e-12, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// (input tensor, flat index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub loss: f64,
    /// Smallest nonzero `|analytic|`, or 0 when every gradient is zero.
    pub min_abs_grad: f64,
    /// Inputs whose analytic gradient is identically zero.
    pub silent_inputs: usize,
}

/// Gradients smaller than this (relative to `max(1, |loss|)`) are below what
/// a central difference with `h = 1e-6` can resolve in 64-bit arithmetic:
/// rounding alone moves the quotient by roughly `1e-10·|loss|`.
pub const RESOLUTION: f64 = 1e-5;

/// Acceptance bound on [`GradCheck::max_rel_error`].
pub const TOLERANCE: f64 = 1e-5;

impl GradCheck {
    /// True when every nonzero analytic gradient is large enough for the
    /// finite differences to judge it at [`TOLERANCE`]. Exact zeros are
    /// always judged, so a dropped gradient still fails.
    pub fn resolvable(&self) -> bool {
        self.min_abs_grad == 0.0 || self.min_abs_grad >= RESOLUTION * self.loss.abs().max(1.0)
    }

    /// A resolvable point where every input influences the result; with a
    /// silent input (all relu units dead, say) the check would say nothing
    /// about the operations behind it.
    pub fn admissible(&self) -> bool {
        self.resolvable() && self.silent_inputs == 0
    }

    pub fn passes(&self) -> bool {
        self.admissible() && self.max_rel_error < TOLERANCE
    }
}

/// Checks the gradient of the scalar `f` at `point` (one leaf per tensor).
pub fn grad_check<F>(point: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(point, f, None)
}

/// Like [`grad_check`], but scales the backward pass of one operation kind
/// by the given factor. A correct checker must then report a large error.
pub fn grad_check_with_fault<F>(point: &[Tensor<f64>], mut f: F, fault: Option<(OpKind, f64)>) -> Result<GradCheck>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    if let Some((kind, scale)) = fault {
        g.inject_backward_fault(kind, scale);
    }
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    check_finite(g.value(loss), "loss", 0)?;
    let grads = g.backward(loss)?;

    let mut eval = |pt: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pt.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(g.shape(out).to_vec()))
    };

    let mut work: Vec<Tensor<f64>> = point.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        loss: g.value(loss).data()[0],
        min_abs_grad: 0.0,
        silent_inputs: 0,
    };
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").clone();
        check_finite(&analytic, "gradient", ti)?;
        if analytic.data().iter().all(|&a| a == 0.0) {
            report.silent_inputs += 1;
        }
        for j in 0..point[ti].len() {
            let x = point[ti].data()[j];
            let h = 1e-6 * x.abs().max(1.0);
            let (up, down) = (x + h, x - h);
            work[ti].data_mut()[j] = up;
            let fp = eval(&work)?;
            work[ti].data_mut()[j] = down;
            let fm = eval(&work)?;
            work[ti].data_mut()[j] = x;
            // divide by the step actually taken after rounding x ± h
            let numeric = (fp - fm) / (up - down);
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("numeric gradient of input {ti}"),
                    index: j,
                });
            }
            let a = analytic.data()[j];
            if a != 0.0 && (report.min_abs_grad == 0.0 || a.abs() < report.min_abs_grad) {
                report.min_abs_grad = a.abs();
            }
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, j));
            }
        }
    }
    Ok(report)
}

/// `|a − n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn check_finite(t: &Tensor<f64>, what: &str, input: usize) -> Result<()> {
    match t.data().iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonFinite {
            what: format!("{what} of input {input}"),
            index,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::from_f64(&[3], &[0.5, -1.5, 2.0]).unwrap();
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, -3.0]).unwrap();
        let r = grad_check(&[x], |g, v| {
            let wc = g.constant(w.clone());
            let p = g.mul(v[0], wc)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = grad_check(&[x], |g, _| Ok(g.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn fault_is_detected() {
        let x = Tensor::from_f64(&[2], &[0.3, -0.2]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let s = g.sigmoid(v[0]);
            Ok(g.sum(s))
        };
        assert!(grad_check(&[x.clone()], f).unwrap().max_rel_error < 1e-8);
        let bad = grad_check_with_fault(&[x], f, Some((OpKind::Sigmoid, 1.5))).unwrap();
        assert!(bad.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_is_reported() {
        let x = Tensor::from_f64(&[1], &[f64::NAN]).unwrap();
        let err = grad_check(&[x], |g, v| Ok(g.sum(v[0]))).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}

