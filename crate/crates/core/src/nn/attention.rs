use alloc::format;
use alloc::vec::Vec;

use super::layers::{LayerNorm, Linear};
use super::params::{ParamGroup, ParamSet};
use super::Mode;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{c, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    /// Dropout inside each block; only active in [`Mode::Train`].
    pub dropout_prob: f64,
}

impl Default for TransformerEncoderConfig {
    fn default() -> Self {
        TransformerEncoderConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 128,
            dropout_prob: 0.1,
        }
    }
}

impl TransformerEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("dropout probability must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Scaled dot-product self-attention over `n_heads` heads. The key
/// projection has no bias: a key bias only shifts every logit of a query
/// row by the same amount, which softmax cancels.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub d_model: usize,
    pub n_heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({d_model}) must be divisible by n_heads ({n_heads})"
            )));
        }
        let grp = ParamGroup::Phi;
        Ok(MultiHeadSelfAttention {
            d_model,
            n_heads,
            q: Linear::new(params, &format!("{prefix}.q"), grp, d_model, d_model, true, rng)?,
            k: Linear::new(params, &format!("{prefix}.k"), grp, d_model, d_model, false, rng)?,
            v: Linear::new(params, &format!("{prefix}.v"), grp, d_model, d_model, true, rng)?,
            o: Linear::new(params, &format!("{prefix}.o"), grp, d_model, d_model, true, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, vars, x)?.0)
    }

    /// Returns the output `[B×L×d_model]` and the attention weights
    /// `[(B·n_heads)×L×L]`, whose rows each sum to one.
    pub fn forward_with_weights<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.d_model {
            return Err(Error::dim("multi_head_self_attention", &s, &[0, 0, self.d_model]));
        }
        let (b, l, h) = (s[0], s[1], self.n_heads);
        let dh = self.d_model / h;
        let q = self.q.forward(g, vars, x)?;
        let k = self.k.forward(g, vars, x)?;
        let v = self.v.forward(g, vars, x)?;
        let split = |g: &mut Graph<T>, t: Var, axes: &[usize], last: [usize; 2]| -> Result<Var> {
            let t = g.reshape(t, &[b, l, h, dh])?;
            let t = g.permute(t, axes)?;
            g.reshape(t, &[b * h, last[0], last[1]])
        };
        let q = split(g, q, &[0, 2, 1, 3], [l, dh])?;
        let kt = split(g, k, &[0, 2, 3, 1], [dh, l])?;
        let v = split(g, v, &[0, 2, 1, 3], [l, dh])?;
        let scores = g.bmm(q, kt)?;
        let scores = g.scale(scores, T::one() / c::<T>(dh as f64).sqrt());
        let weights = g.softmax(scores, 2)?;
        let ctx = g.bmm(weights, v)?;
        let ctx = g.reshape(ctx, &[b, h, l, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, l, self.d_model])?;
        Ok((self.o.forward(g, vars, ctx)?, weights))
    }
}

/// Pre-norm block: `x + attn(LN(x))`, then `h + FFN(LN(h))` with a relu FFN.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadSelfAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    dropout: f64,
}

impl EncoderBlock {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        cfg: &TransformerEncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let grp = ParamGroup::Phi;
        Ok(EncoderBlock {
            ln1: LayerNorm::new(params, &format!("{prefix}.ln1"), grp, cfg.d_model)?,
            attn: MultiHeadSelfAttention::new(params, &format!("{prefix}.attn"), cfg.d_model, cfg.n_heads, rng)?,
            ln2: LayerNorm::new(params, &format!("{prefix}.ln2"), grp, cfg.d_model)?,
            ff1: Linear::new(params, &format!("{prefix}.ff1"), grp, cfg.d_model, cfg.ffn_dim, true, rng)?,
            ff2: Linear::new(params, &format!("{prefix}.ff2"), grp, cfg.ffn_dim, cfg.d_model, true, rng)?,
            dropout: cfg.dropout_prob,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let p = if mode == Mode::Train { self.dropout } else { 0.0 };
        let n = self.ln1.forward(g, vars, x)?;
        let a = self.attn.forward(g, vars, n)?;
        let a = g.dropout(a, p, rng)?;
        let h = g.add(x, a)?;
        let n = self.ln2.forward(g, vars, h)?;
        let f = self.ff1.forward(g, vars, n)?;
        let f = g.relu(f);
        let f = self.ff2.forward(g, vars, f)?;
        let f = g.dropout(f, p, rng)?;
        g.add(h, f)
    }
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub config: TransformerEncoderConfig,
    blocks: Vec<EncoderBlock>,
    final_ln: Option<LayerNorm>,
}

impl TransformerEncoder {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        cfg: &TransformerEncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.n_layers)
            .map(|i| EncoderBlock::new(params, &format!("{prefix}.layer{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        // pre-norm blocks leave the residual stream unnormalized; with no
        // blocks the encoder stays the identity
        let final_ln = if cfg.n_layers > 0 {
            Some(LayerNorm::new(params, &format!("{prefix}.final_ln"), ParamGroup::Phi, cfg.d_model)?)
        } else {
            None
        };
        Ok(TransformerEncoder {
            config: cfg.clone(),
            blocks,
            final_ln,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.config.d_model {
            return Err(Error::dim("transformer_encoder", s, &[0, 0, self.config.d_model]));
        }
        let mut x = x;
        for block in &self.blocks {
            x = block.forward(g, vars, x, mode, rng)?;
        }
        match &self.final_ln {
            Some(ln) => ln.forward(g, vars, x),
            None => Ok(x),
        }
    }
}
