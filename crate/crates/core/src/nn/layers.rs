use alloc::format;

use num_traits::Float;

use super::params::{ParamGroup, ParamId, ParamSet};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// `y = x·Wᵀ + b` over the last axis. Inputs of any rank ≥ 2 are flattened
/// to rows and reshaped back.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let std = Float::sqrt(2.0 / in_dim as f64);
        let w = params.add(format!("{name}.weight"), group, Tensor::randn(&[out_dim, in_dim], std, rng))?;
        let b = if bias {
            Some(params.add(format!("{name}.bias"), group, Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() < 2 || *s.last().unwrap() != self.in_dim {
            return Err(Error::dim("linear", &s, &[self.out_dim, self.in_dim]));
        }
        let rows: usize = s[..s.len() - 1].iter().product();
        let flat = if s.len() == 2 { x } else { g.reshape(x, &[rows, self.in_dim])? };
        let y = g.linear(flat, vars[self.w.0], self.b.map(|b| vars[b.0]))?;
        if s.len() == 2 {
            Ok(y)
        } else {
            let mut out = s;
            *out.last_mut().unwrap() = self.out_dim;
            g.reshape(y, &out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        group: ParamGroup,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let std = Float::sqrt(2.0 / fan_in as f64);
        let w = params.add(
            format!("{name}.weight"),
            group,
            Tensor::randn(&[out_ch, in_ch, kernel, kernel], std, rng),
        )?;
        let b = params.add(format!("{name}.bias"), group, Tensor::zeros(&[out_ch]))?;
        Ok(Conv2d { w, b, stride, pad })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, vars[self.w.0], Some(vars[self.b.0]), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, group: ParamGroup, dim: usize) -> Result<Self> {
        let gamma = params.add(format!("{name}.gamma"), group, Tensor::full(&[dim], T::one()))?;
        let beta = params.add(format!("{name}.beta"), group, Tensor::zeros(&[dim]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, vars[self.gamma.0], vars[self.beta.0])
    }
}
