use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Inverse-frequency class weights `w_c = N / (2·n_c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
    pub n0: u64,
    pub n1: u64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        w0: 1.0,
        w1: 1.0,
        n0: 0,
        n1: 0,
    };

    pub fn for_label(&self, y: u8) -> f64 {
        if y == 1 {
            self.w1
        } else {
            self.w0
        }
    }
}

fn neighbours(w: f64) -> [f64; 3] {
    // positive finite values: adjacent bit patterns are adjacent doubles
    let b = w.to_bits();
    [w, f64::from_bits(b + 1), f64::from_bits(b - 1)]
}

/// Weights such that `w0·n0 + w1·n1 == n0 + n1` holds exactly in `f64`.
/// Each weight is the correctly rounded `N/(2·n_c)` unless rounding breaks
/// the identity, in which case it moves by one ulp.
pub fn class_weights(n0: u64, n1: u64) -> Result<ClassWeights> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::Data(format!(
            "class weights undefined with an empty class (n0={n0}, n1={n1})"
        )));
    }
    let n = (n0 + n1) as f64;
    let (f0, f1) = (n0 as f64, n1 as f64);
    let (a, b) = (n / (2.0 * f0), n / (2.0 * f1));
    for w0 in neighbours(a) {
        for w1 in neighbours(b) {
            if w0 * f0 + w1 * f1 == n {
                return Ok(ClassWeights { w0, w1, n0, n1 });
            }
        }
    }
    Ok(ClassWeights { w0: a, w1: b, n0, n1 })
}

/// Records the class-weighted BCE of `probs` (`[B×1]`) against `labels`.
pub fn weighted_bce<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[u8], weights: &ClassWeights) -> Result<Var> {
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Label(format!("{bad}")));
    }
    let targets: Vec<T> = labels.iter().map(|&y| T::from_f64(y as f64)).collect();
    let w: Vec<T> = labels.iter().map(|&y| T::from_f64(weights.for_label(y))).collect();
    g.weighted_bce(probs, &targets, &w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let w = class_weights(50, 50).unwrap();
        assert_eq!((w.w0, w.w1), (1.0, 1.0));
        let w = class_weights(75, 25).unwrap();
        assert!((w.w0 - 0.666667).abs() < 1e-6);
        assert_eq!(w.w1, 2.0);
        assert!(class_weights(0, 3).is_err());
    }

    #[test]
    fn identity_is_exact() {
        let mut rng = crate::Rng::new(11);
        for _ in 0..10_000 {
            let n0 = 1 + rng.below(1_000_000) as u64;
            let n1 = 1 + rng.below(1_000_000) as u64;
            let w = class_weights(n0, n1).unwrap();
            assert_eq!(w.w0 * n0 as f64 + w.w1 * n1 as f64, (n0 + n1) as f64);
        }
    }
}
