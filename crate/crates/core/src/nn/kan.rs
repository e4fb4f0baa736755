//! Fusion heads over the concatenated CNN/Transformer feature vector.

use alloc::format;

use super::params::{ParamGroup, ParamId, ParamSet};
use super::spline::BSplineBasis;
use num_traits::Float;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Outer nonlinearity of [`kan_fusion_eq5`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionActivation {
    #[default]
    Sigmoid,
    Identity,
}

/// `act(W2 · relu(W1 · f))` per sample, for `f[B×D]`, `W1[h×D]`, `W2[k×h]`.
pub fn kan_fusion_eq5<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    w1: Var,
    w2: Var,
    activation: FusionActivation,
) -> Result<Var> {
    let (sf, s1, s2) = (g.shape(f), g.shape(w1), g.shape(w2));
    if sf.len() != 2 || s1.len() != 2 || s2.len() != 2 || sf[1] != s1[1] || s1[0] != s2[1] {
        return Err(Error::dim("kan_fusion_eq5", sf, s1));
    }
    let hidden = g.linear(f, w1, None)?;
    let hidden = g.relu(hidden);
    let out = g.linear(hidden, w2, None)?;
    Ok(match activation {
        FusionActivation::Sigmoid => g.sigmoid(out),
        FusionActivation::Identity => out,
    })
}

/// Two-matrix fusion head with learnable `W1`, `W2` (no biases).
#[derive(Debug, Clone)]
pub struct KanEq5 {
    pub w1: ParamId,
    pub w2: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub activation: FusionActivation,
}

impl KanEq5 {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: FusionActivation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(Error::config("fusion dimensions must be positive"));
        }
        let w1 = Tensor::randn(&[hidden, in_dim], Float::sqrt(2.0 / in_dim as f64), rng);
        let w2 = Tensor::randn(&[out_dim, hidden], Float::sqrt(2.0 / hidden as f64), rng);
        Ok(KanEq5 {
            w1: params.add(format!("{prefix}.w1"), ParamGroup::Psi, w1)?,
            w2: params.add(format!("{prefix}.w2"), ParamGroup::Psi, w2)?,
            in_dim,
            hidden,
            out_dim,
            activation,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], f: Var) -> Result<Var> {
        kan_fusion_eq5(g, f, vars[self.w1.0], vars[self.w2.0], self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanSplineLayerConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub grid_range: (f64, f64),
}

impl KanSplineLayerConfig {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        KanSplineLayerConfig {
            in_dim,
            out_dim,
            grid_size: 8,
            spline_order: 3,
            grid_range: (-2.0, 2.0),
        }
    }

    pub fn basis(&self) -> Result<BSplineBasis> {
        BSplineBasis::uniform(self.grid_size, self.spline_order, self.grid_range.0, self.grid_range.1)
    }

    pub fn n_basis(&self) -> usize {
        self.grid_size + self.spline_order
    }
}

/// Kolmogorov-Arnold layer: every edge `i → o` carries its own learnable
/// univariate function `base[o,i]·silu(x) + Σ_j coeff[o,i,j]·B_j(x)`, and
/// each output sums its incoming edges.
#[derive(Debug, Clone)]
pub struct KanSplineLayer {
    pub config: KanSplineLayerConfig,
    pub base_weight: ParamId,
    pub coeff: ParamId,
    basis: BSplineBasis,
}

impl KanSplineLayer {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        config: &KanSplineLayerConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.in_dim == 0 || config.out_dim == 0 {
            return Err(Error::config("spline layer dimensions must be positive"));
        }
        let basis = config.basis()?;
        let (i, o, nb) = (config.in_dim, config.out_dim, basis.len());
        let base = Tensor::randn(&[o, i], Float::sqrt(1.0 / i as f64), rng);
        let coeff = Tensor::randn(&[o, i, nb], 0.1 / Float::sqrt(i as f64), rng);
        Ok(KanSplineLayer {
            config: config.clone(),
            base_weight: params.add(format!("{prefix}.base_weight"), ParamGroup::Psi, base)?,
            coeff: params.add(format!("{prefix}.coeff"), ParamGroup::Psi, coeff)?,
            basis,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let cfg = &self.config;
        if s.len() != 2 || s[1] != cfg.in_dim {
            return Err(Error::dim("kan_spline_layer", &s, &[0, cfg.in_dim]));
        }
        let nb = self.basis.len();
        let act = g.silu(x);
        let base = g.linear(act, vars[self.base_weight.0], None)?;
        let bases = g.bspline(x, &self.basis)?;
        let bases = g.reshape(bases, &[s[0], cfg.in_dim * nb])?;
        let coeff = g.reshape(vars[self.coeff.0], &[cfg.out_dim, cfg.in_dim * nb])?;
        let spline = g.linear(bases, coeff, None)?;
        g.add(base, spline)
    }
}
