//! The two classifier topologies.
//!
//! * [`ModelKind::Sequential`]: CNN → tokens → projection → positional
//!   encoding → Transformer encoder → mean pool → linear head.
//! * [`ModelKind::Parallel`]: a CNN branch (global-average-pooled) and a
//!   patch-embedding Transformer branch (mean-pooled) run side by side, their
//!   features are concatenated and fused by a KAN head, then a linear head.
//!
//! Both return one raw logit per image.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{
    positional_encoding, CnnBackbone, CnnBackboneConfig, FusionActivation, KanEq5, KanSplineLayer,
    KanSplineLayerConfig, Linear, Mode, ParamGroup, ParamSet, TransformerEncoder, TransformerEncoderConfig,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sequential,
    Parallel,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sequential => "sequential",
            ModelKind::Parallel => "parallel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    Eq5,
    Spline,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Eq5 => "eq5",
            FusionKind::Spline => "spline",
        }
    }
}

/// Full architecture description; together with a parameter table it
/// reconstructs a network exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub image_size: usize,
    pub backbone: CnnBackboneConfig,
    pub encoder: TransformerEncoderConfig,
    /// Side of the square patches tokenizing the image in the parallel model.
    pub patch_size: usize,
    pub fusion: FusionKind,
    /// Hidden width of the two-matrix fusion head.
    pub fusion_hidden: usize,
    /// Output width of either fusion head.
    pub fusion_out: usize,
    pub fusion_activation: FusionActivation,
    pub spline_grid_size: usize,
    pub spline_order: usize,
    pub spline_range: (f64, f64),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Sequential,
            image_size: 224,
            backbone: CnnBackboneConfig::default(),
            encoder: TransformerEncoderConfig::default(),
            patch_size: 16,
            fusion: FusionKind::Spline,
            fusion_hidden: 64,
            fusion_out: 32,
            fusion_activation: FusionActivation::Sigmoid,
            spline_grid_size: 8,
            spline_order: 3,
            spline_range: (-2.0, 2.0),
        }
    }
}

impl ModelConfig {
    /// Number of tokens the encoder sees.
    pub fn seq_len(&self) -> Result<usize> {
        match self.kind {
            ModelKind::Sequential => {
                let (h, w) = self.backbone.output_grid(self.image_size, self.image_size)?;
                Ok(h * w)
            }
            ModelKind::Parallel => {
                self.backbone.output_grid(self.image_size, self.image_size)?;
                let p = self.patch_size;
                if p == 0 || self.image_size % p != 0 {
                    return Err(Error::Config(format!(
                        "image size {} must be divisible by patch size {p}",
                        self.image_size
                    )));
                }
                Ok((self.image_size / p) * (self.image_size / p))
            }
        }
    }

    /// Width of the concatenated feature vector in the parallel model.
    pub fn fusion_in(&self) -> usize {
        self.backbone.out_channels() + self.encoder.d_model
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.d_model % 2 != 0 {
            return Err(Error::config("d_model must be even for positional encoding"));
        }
        if self.fusion_hidden == 0 || self.fusion_out == 0 {
            return Err(Error::config("fusion widths must be positive"));
        }
        self.seq_len().map(|_| ())
    }
}

#[derive(Debug, Clone)]
enum Fusion {
    Eq5(KanEq5),
    Spline(KanSplineLayer),
}

#[derive(Debug, Clone)]
enum Arch {
    Sequential {
        cnn: CnnBackbone,
        projection: Option<Linear>,
        encoder: TransformerEncoder,
        head: Linear,
    },
    Parallel {
        cnn: CnnBackbone,
        patch: Linear,
        encoder: TransformerEncoder,
        fusion: Fusion,
        head: Linear,
    },
}

/// A classifier: architecture plus its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    arch: Arch,
    pe: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds a randomly initialized network.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamSet::new();
        let d = config.encoder.d_model;
        let c_out = config.backbone.out_channels();
        let cnn = CnnBackbone::new(&mut params, "cnn", &config.backbone, &mut rng)?;
        let arch = match config.kind {
            ModelKind::Sequential => {
                let projection = if c_out != d {
                    Some(Linear::new(&mut params, "proj", ParamGroup::Phi, c_out, d, true, &mut rng)?)
                } else {
                    None
                };
                let encoder = TransformerEncoder::new(&mut params, "encoder", &config.encoder, &mut rng)?;
                let head = Linear::new(&mut params, "head", ParamGroup::Omega, d, 1, true, &mut rng)?;
                Arch::Sequential {
                    cnn,
                    projection,
                    encoder,
                    head,
                }
            }
            ModelKind::Parallel => {
                let p = config.patch_size;
                let patch = Linear::new(&mut params, "patch", ParamGroup::Phi, 3 * p * p, d, true, &mut rng)?;
                let encoder = TransformerEncoder::new(&mut params, "encoder", &config.encoder, &mut rng)?;
                let fin = config.fusion_in();
                let fusion = match config.fusion {
                    FusionKind::Eq5 => Fusion::Eq5(KanEq5::new(
                        &mut params,
                        "fusion",
                        fin,
                        config.fusion_hidden,
                        config.fusion_out,
                        config.fusion_activation,
                        &mut rng,
                    )?),
                    FusionKind::Spline => {
                        let cfg = KanSplineLayerConfig {
                            in_dim: fin,
                            out_dim: config.fusion_out,
                            grid_size: config.spline_grid_size,
                            spline_order: config.spline_order,
                            grid_range: config.spline_range,
                        };
                        Fusion::Spline(KanSplineLayer::new(&mut params, "fusion", &cfg, &mut rng)?)
                    }
                };
                let head = Linear::new(&mut params, "head", ParamGroup::Omega, config.fusion_out, 1, true, &mut rng)?;
                Arch::Parallel {
                    cnn,
                    patch,
                    encoder,
                    fusion,
                    head,
                }
            }
        };
        let pe = positional_encoding(config.seq_len()?, d)?.table.cast();
        Ok(Model {
            config: config.clone(),
            params,
            arch,
            pe,
        })
    }

    /// Parameter names of one group.
    pub fn group_names(&self, group: ParamGroup) -> Vec<String> {
        self.params.group(group).map(|p| p.name.clone()).collect()
    }

    /// Records the forward pass on `g`. `vars` are the bound parameters
    /// (see [`ParamSet::bind`]); `images` is `[B×3×S×S]`. Returns logits `[B×1]`.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], images: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let s = g.shape(images).to_vec();
        let size = self.config.image_size;
        if s.len() != 4 || s[1] != 3 || s[2] != size || s[3] != size {
            return Err(Error::dim("model input", &s, &[0, 3, size, size]));
        }
        let b = s[0];
        let d = self.config.encoder.d_model;
        match &self.arch {
            Arch::Sequential {
                cnn,
                projection,
                encoder,
                head,
            } => {
                let f = cnn.forward(g, vars, images)?;
                let fs = g.shape(f).to_vec();
                let (ch, l) = (fs[1], fs[2] * fs[3]);
                let f = g.reshape(f, &[b, ch, l])?;
                let mut tokens = g.permute(f, &[0, 2, 1])?;
                if let Some(p) = projection {
                    tokens = p.forward(g, vars, tokens)?;
                }
                let x = self.add_positions(g, tokens, b, l)?;
                let x = encoder.forward(g, vars, x, mode, rng)?;
                let pooled = g.mean(x, 1)?;
                debug_assert_eq!(g.shape(pooled), [b, d]);
                head.forward(g, vars, pooled)
            }
            Arch::Parallel {
                cnn,
                patch,
                encoder,
                fusion,
                head,
            } => {
                let f_cnn = cnn.forward(g, vars, images)?;
                let f_cnn = {
                    let fs = g.shape(f_cnn).to_vec();
                    let flat = g.reshape(f_cnn, &[fs[0], fs[1], fs[2] * fs[3]])?;
                    g.mean(flat, 2)?
                };
                let p = self.config.patch_size;
                let n = size / p;
                // [B,3,n,p,n,p] → [B,n,n,3,p,p] → [B, n·n, 3·p·p]
                let x = g.reshape(images, &[b, 3, n, p, n, p])?;
                let x = g.permute(x, &[0, 2, 4, 1, 3, 5])?;
                let x = g.reshape(x, &[b, n * n, 3 * p * p])?;
                let tokens = patch.forward(g, vars, x)?;
                let x = self.add_positions(g, tokens, b, n * n)?;
                let x = encoder.forward(g, vars, x, mode, rng)?;
                let f_t = g.mean(x, 1)?;
                let concat = g.concat(&[f_cnn, f_t], 1)?;
                let fused = match fusion {
                    Fusion::Eq5(l) => l.forward(g, vars, concat)?,
                    Fusion::Spline(l) => l.forward(g, vars, concat)?,
                };
                head.forward(g, vars, fused)
            }
        }
    }

    fn add_positions(&self, g: &mut Graph<T>, tokens: Var, b: usize, l: usize) -> Result<Var> {
        let d = self.config.encoder.d_model;
        if self.pe.shape() != [l, d] {
            return Err(Error::dim("positional encoding", self.pe.shape(), &[l, d]));
        }
        let mut data = Vec::with_capacity(b * l * d);
        for _ in 0..b {
            data.extend_from_slice(self.pe.data());
        }
        let pe = g.constant(Tensor::new(&[b, l, d], data)?);
        g.add(tokens, pe)
    }

    /// Eval-mode logits for a batch, without recording gradients.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let x = g.constant(images.clone());
        let mut rng = Rng::new(0);
        let out = self.forward(&mut g, &vars, x, Mode::Eval, &mut rng)?;
        Ok(g.value(out).clone())
    }
}

/// Probability and hard label for each logit; ties at the threshold go to
/// the malignant class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub label: u8,
}

pub fn predict<T: Scalar>(logits: &[T], threshold: f64) -> Vec<Prediction> {
    logits
        .iter()
        .map(|&z| {
            let probability = sigmoid(z).to_f64();
            Prediction {
                probability,
                label: u8::from(probability >= threshold),
            }
        })
        .collect()
}
