use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::Conv2d;
use super::params::{ParamGroup, ParamSet};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Stages of `3×3 conv (padding 1) → relu → 2×2 max-pool`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnBackboneConfig {
    pub stage_channels: Vec<usize>,
    pub input_channels: usize,
}

impl Default for CnnBackboneConfig {
    fn default() -> Self {
        CnnBackboneConfig {
            stage_channels: vec![16, 32, 64, 128],
            input_channels: 3,
        }
    }
}

impl CnnBackboneConfig {
    pub fn out_channels(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(self.input_channels)
    }

    /// Side divisor imposed by the pooling stages.
    pub fn reduction(&self) -> usize {
        1 << self.stage_channels.len()
    }

    /// Output grid for an `h×w` input, or a configuration error when the
    /// pooling stages do not divide the input evenly.
    pub fn output_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let r = self.reduction();
        if h == 0 || w == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} must be divisible by {r} (2^{} backbone stages)",
                self.stage_channels.len()
            )));
        }
        Ok((h / r, w / r))
    }
}

#[derive(Debug, Clone)]
pub struct CnnBackbone {
    pub config: CnnBackboneConfig,
    stages: Vec<Conv2d>,
}

impl CnnBackbone {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        config: &CnnBackboneConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.stage_channels.iter().any(|&c| c == 0) || config.input_channels == 0 {
            return Err(Error::config("backbone channel counts must be positive"));
        }
        let mut stages = Vec::new();
        let mut in_ch = config.input_channels;
        for (i, &out_ch) in config.stage_channels.iter().enumerate() {
            let name = format!("{prefix}.stage{i}");
            stages.push(Conv2d::new(params, &name, ParamGroup::Theta, in_ch, out_ch, 3, 1, 1, rng)?);
            in_ch = out_ch;
        }
        Ok(CnnBackbone {
            config: config.clone(),
            stages,
        })
    }

    /// `images[B×C×H×W] → [B×C_out×H/2^s×W/2^s]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != self.config.input_channels {
            return Err(Error::dim("cnn_backbone", &s, &[0, self.config.input_channels, 0, 0]));
        }
        self.config.output_grid(s[2], s[3])?;
        let mut x = images;
        for stage in &self.stages {
            x = stage.forward(g, vars, x)?;
            x = g.relu(x);
            x = g.max_pool2(x)?;
        }
        Ok(x)
    }
}
