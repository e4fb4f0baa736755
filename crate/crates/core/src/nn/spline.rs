//! B-spline basis functions on a fixed knot vector (Cox-de Boor recursion).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    order: usize,
}

impl BSplineBasis {
    /// `knots` must be strictly increasing and hold at least `2·order + 2` entries.
    pub fn new(knots: Vec<f64>, order: usize) -> Result<Self> {
        if knots.len() < 2 * order + 2 {
            return Err(Error::config("spline knot vector too short for its order"));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("spline knot vector must be strictly increasing"));
        }
        Ok(BSplineBasis { knots, order })
    }

    /// Uniform grid of `grid_size` intervals on `[lo, hi]`, extended by
    /// `order` knots on each side.
    pub fn uniform(grid_size: usize, order: usize, lo: f64, hi: f64) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::config("spline grid_size must be at least 1"));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config("spline grid_range must satisfy lo < hi"));
        }
        let h = (hi - lo) / grid_size as f64;
        let knots = (0..=grid_size + 2 * order)
            .map(|i| lo + (i as f64 - order as f64) * h)
            .collect();
        Self::new(knots, order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - 1 - self.order
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interval on which the bases form a partition of unity.
    pub fn domain(&self) -> (f64, f64) {
        let m = self.knots.len() - 1;
        (self.knots[self.order], self.knots[m - self.order])
    }

    /// Writes basis values and their derivatives w.r.t. `x` into the two
    /// output slices (each of length [`Self::len`]). Inputs outside the
    /// domain are clamped to it and get zero derivative.
    pub fn eval(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) {
        let (lo, hi) = self.domain();
        let inside = (lo..=hi).contains(&x);
        let x = x.clamp(lo, hi);
        let t = &self.knots;
        let k = self.order;
        let n0 = t.len() - 1;
        let mut b = vec![0.0f64; n0];
        // half-open intervals; at the right domain end pick the interval that starts there
        for i in 0..n0 {
            if t[i] <= x && x < t[i + 1] {
                b[i] = 1.0;
                break;
            }
        }
        let mut lower = Vec::new();
        for p in 1..=k {
            if p == k {
                lower = b.clone();
            }
            let count = n0 - p;
            for i in 0..count {
                let left = (x - t[i]) / (t[i + p] - t[i]) * b[i];
                let right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * b[i + 1];
                b[i] = left + right;
            }
            b.truncate(count);
        }
        let nb = self.len();
        values[..nb].copy_from_slice(&b[..nb]);
        for i in 0..nb {
            derivs[i] = if !inside || k == 0 {
                0.0
            } else {
                let kf = k as f64;
                kf / (t[i + k] - t[i]) * lower[i] - kf / (t[i + k + 1] - t[i + 1]) * lower[i + 1]
            };
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        let mut d = vec![0.0; self.len()];
        self.eval(x, &mut v, &mut d);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_on_domain() {
        let b = BSplineBasis::uniform(8, 3, -2.0, 2.0).unwrap();
        assert_eq!(b.len(), 11);
        for i in 0..=400 {
            let x = -2.0 + 4.0 * i as f64 / 400.0;
            let s: f64 = b.values(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "x={x} sum={s}");
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let b = BSplineBasis::uniform(5, 3, -1.0, 1.5).unwrap();
        let n = b.len();
        let (mut v, mut d) = (vec![0.0; n], vec![0.0; n]);
        for &x in &[-0.93, -0.31, 0.07, 0.66, 1.21] {
            b.eval(x, &mut v, &mut d);
            let h = 1e-6;
            let (vp, vm) = (b.values(x + h), b.values(x - h));
            for j in 0..n {
                let num = (vp[j] - vm[j]) / (2.0 * h);
                assert!((num - d[j]).abs() < 1e-7, "x={x} j={j}");
            }
        }
    }

    #[test]
    fn rejects_non_increasing_knots() {
        assert!(BSplineBasis::new(vec![0.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).is_err());
        assert!(BSplineBasis::uniform(4, 3, 1.0, 1.0).is_err());
    }

    #[test]
    fn outside_domain_is_clamped() {
        let b = BSplineBasis::uniform(8, 3, -2.0, 2.0).unwrap();
        assert_eq!(b.values(5.0), b.values(2.0));
        assert_eq!(b.values(-7.0), b.values(-2.0));
    }
}
