//! Tiny instances of every layer kind and both classifiers, for checking the
//! tape end to end.

use alloc::vec::Vec;

use super::{grad_check_with_fault, GradCheck};
use crate::autograd::{Graph, OpKind, Var};
use crate::error::Result;
use crate::models::{FusionKind, Model, ModelConfig, ModelKind};
use crate::nn::{
    positional_encoding, CnnBackbone, CnnBackboneConfig, Conv2d, EncoderBlock, FusionActivation, KanEq5,
    KanSplineLayer, KanSplineLayerConfig, LayerNorm, Linear, Mode, MultiHeadSelfAttention, ParamGroup, ParamSet,
    TransformerEncoderConfig,
};
use crate::rng::{mix_seed, Rng};
use crate::tensor::Tensor;
use crate::train::{weighted_bce, ClassWeights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteRow {
    pub name: &'static str,
    pub check: GradCheck,
    /// Points drawn before one was admissible (1 = the first).
    pub attempts: usize,
}

impl SuiteRow {
    pub fn passes(&self) -> bool {
        self.check.passes()
    }
}

type Fault = Option<(OpKind, f64)>;
type RowFn = fn(u64, Fault) -> Result<GradCheck>;

/// Points tried per row before giving up on finding a resolvable one.
pub const MAX_ATTEMPTS: usize = 32;

/// Reduces `out` to a scalar with fixed random weights so that every output
/// coordinate contributes a distinct amount. Weights have random sign and
/// magnitude in `[0.5, 1.5]`: near-zero weights would manufacture gradients
/// below the resolution of the finite differences, and mixed signs keep the
/// reduced value (and with it the rounding noise) small.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut rng = Rng::from_parts(&[seed, 0x9E0]);
    let mut r = Tensor::<f64>::rand_uniform(&shape, 0.5, 1.5, &mut rng);
    for v in r.data_mut() {
        if rng.next_f64() < 0.5 {
            *v = -*v;
        }
    }
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

/// Parameter values moved off their initialization (unit LayerNorm gains,
/// zero biases) so the check exercises generic points.
const JITTER: f64 = 0.1;

fn jittered(params: &ParamSet<f64>, rng: &mut Rng) -> Vec<Tensor<f64>> {
    params
        .iter()
        .map(|p| {
            let noise = Tensor::<f64>::randn(p.value.shape(), JITTER, rng);
            p.value.zip_with(&noise, "jitter", |a, b| a + b).unwrap()
        })
        .collect()
}

/// Checks `layer(x)` w.r.t. the input and every parameter. `forward` gets the
/// bound parameters followed by the input.
fn check_layer<F>(params: &ParamSet<f64>, x: Tensor<f64>, seed: u64, fault: Fault, mut forward: F) -> Result<GradCheck>
where
    F: FnMut(&mut Graph<f64>, &[Var], Var) -> Result<Var>,
{
    let mut rng = Rng::from_parts(&[seed, 0x1A7]);
    let mut point = jittered(params, &mut rng);
    point.push(x);
    let n = params.len();
    grad_check_with_fault(
        &point,
        |g, v| {
            let out = forward(g, &v[..n], v[n])?;
            project(g, out, seed)
        },
        fault,
    )
}

fn tiny_encoder() -> TransformerEncoderConfig {
    TransformerEncoderConfig {
        d_model: 6,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 8,
        dropout_prob: 0.1,
    }
}

/// Every parameter is a checked coordinate, and each one carries a small
/// chance of a gradient too faint for the finite differences, so the models
/// are kept as small as the topology allows.
fn tiny_model(kind: ModelKind, fusion: FusionKind) -> ModelConfig {
    ModelConfig {
        kind,
        image_size: IMAGE,
        backbone: CnnBackboneConfig {
            stage_channels: alloc::vec![3],
            input_channels: 3,
        },
        encoder: TransformerEncoderConfig {
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 6,
            dropout_prob: 0.1,
        },
        patch_size: 2,
        fusion,
        fusion_hidden: 6,
        fusion_out: 2,
        fusion_activation: FusionActivation::Sigmoid,
        spline_grid_size: 1,
        spline_order: 3,
        spline_range: (-3.0, 3.0),
    }
}

const IMAGE: usize = 4;

fn check_model(kind: ModelKind, fusion: FusionKind, seed: u64, fault: Fault) -> Result<GradCheck> {
    let model = Model::<f64>::new(&tiny_model(kind, fusion), seed)?;
    let mut rng = Rng::from_parts(&[seed, 0x30D]);
    let point = jittered(&model.params, &mut rng);
    let images = Tensor::randn(&[2, 3, IMAGE, IMAGE], 1.0, &mut rng);
    let labels = [1u8, 0];
    let weights = ClassWeights {
        w0: 0.75,
        w1: 1.5,
        n0: 2,
        n1: 1,
    };
    grad_check_with_fault(
        &point,
        |g, v| {
            // same dropout masks on every evaluation
            let mut drop = Rng::from_parts(&[seed, 0xD0]);
            let x = g.constant(images.clone());
            let logits = model.forward(g, v, x, Mode::Train, &mut drop)?;
            let p = g.sigmoid(logits);
            weighted_bce(g, p, &labels, &weights)
        },
        fault,
    )
}

fn linear(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let lin = Linear::new(&mut ps, "lin", ParamGroup::Omega, 5, 3, true, &mut rng)?;
    let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| lin.forward(g, v, x))
}

fn conv2d(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let conv = Conv2d::new(&mut ps, "conv", ParamGroup::Theta, 2, 3, 3, 2, 1, &mut rng)?;
    let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| conv.forward(g, v, x))
}

fn cnn_backbone(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let cfg = CnnBackboneConfig {
        stage_channels: alloc::vec![3, 4],
        input_channels: 2,
    };
    let cnn = CnnBackbone::new(&mut ps, "cnn", &cfg, &mut rng)?;
    let x = Tensor::randn(&[2, 2, 8, 8], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| cnn.forward(g, v, x))
}

fn layer_norm(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let ln = LayerNorm::new(&mut ps, "ln", ParamGroup::Phi, 6)?;
    let x = Tensor::randn(&[2, 3, 6], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| ln.forward(g, v, x))
}

fn softmax(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
    check_layer(&ParamSet::new(), x, seed, fault, |g, _, x| g.softmax(x, 1))
}

fn attention(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let attn = MultiHeadSelfAttention::new(&mut ps, "attn", 6, 2, &mut rng)?;
    let x = Tensor::randn(&[2, 4, 6], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| attn.forward(g, v, x))
}

fn encoder_block(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let block = EncoderBlock::new(&mut ps, "block", &tiny_encoder(), &mut rng)?;
    let x = Tensor::randn(&[2, 4, 6], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| {
        let mut drop = Rng::from_parts(&[seed, 0xD1]);
        block.forward(g, v, x, Mode::Train, &mut drop)
    })
}

fn positional(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let pe: Tensor<f64> = positional_encoding(4, 6)?.table.reshape(&[1, 4, 6])?;
    let x = Tensor::randn(&[1, 4, 6], 1.0, &mut rng);
    check_layer(&ParamSet::new(), x, seed, fault, |g, _, x| {
        let pe = g.constant(pe.clone());
        let y = g.add(x, pe)?;
        Ok(g.sigmoid(y))
    })
}

fn eq5_fusion(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let eq5 = KanEq5::new(&mut ps, "eq5", 6, 5, 3, FusionActivation::Sigmoid, &mut rng)?;
    let x = Tensor::randn(&[3, 6], 1.0, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| eq5.forward(g, v, x))
}

fn spline_layer(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let mut ps = ParamSet::new();
    let cfg = KanSplineLayerConfig {
        grid_size: 5,
        ..KanSplineLayerConfig::new(4, 3)
    };
    let spline = KanSplineLayer::new(&mut ps, "kan", &cfg, &mut rng)?;
    let x = Tensor::rand_uniform(&[3, 4], -1.8, 1.8, &mut rng);
    check_layer(&ps, x, seed, fault, |g, v, x| spline.forward(g, v, x))
}

fn bce(seed: u64, fault: Fault) -> Result<GradCheck> {
    let mut rng = Rng::from_parts(&[seed, 0x5E7]);
    let logits = Tensor::randn(&[5, 1], 1.5, &mut rng);
    let labels = [1u8, 0, 0, 1, 0];
    let weights = ClassWeights {
        w0: 0.8,
        w1: 1.3,
        n0: 3,
        n1: 2,
    };
    grad_check_with_fault(
        &[logits],
        |g, v| {
            let p = g.sigmoid(v[0]);
            weighted_bce(g, p, &labels, &weights)
        },
        fault,
    )
}

fn sequential(seed: u64, fault: Fault) -> Result<GradCheck> {
    check_model(ModelKind::Sequential, FusionKind::Spline, seed, fault)
}

fn parallel_eq5(seed: u64, fault: Fault) -> Result<GradCheck> {
    check_model(ModelKind::Parallel, FusionKind::Eq5, seed, fault)
}

fn parallel_spline(seed: u64, fault: Fault) -> Result<GradCheck> {
    check_model(ModelKind::Parallel, FusionKind::Spline, seed, fault)
}

/// Every row of the suite: each layer kind, the loss, and both topologies.
pub const SUITE: &[(&str, RowFn)] = &[
    ("linear", linear),
    ("conv2d", conv2d),
    ("cnn_backbone", cnn_backbone),
    ("layer_norm", layer_norm),
    ("softmax", softmax),
    ("attention", attention),
    ("encoder_block", encoder_block),
    ("positional_encoding", positional),
    ("eq5_fusion", eq5_fusion),
    ("spline_layer", spline_layer),
    ("weighted_bce", bce),
    ("sequential_model", sequential),
    ("parallel_model_eq5", parallel_eq5),
    ("parallel_model_spline", parallel_spline),
];

/// Runs every row starting from the point derived from `seed`. A point that
/// is not [admissible](GradCheck::admissible) is replaced by the next one in a fixed sequence; if none of
/// [`MAX_ATTEMPTS`] qualifies the last is reported, and it fails.
///
/// With `fault`, the backward pass of that operation kind is scaled, which
/// must show up as a large error in the rows that use it.
pub fn layer_suite(seed: u64, fault: Fault) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::with_capacity(SUITE.len());
    for &(name, row) in SUITE {
        let mut attempt = 0;
        loop {
            let s = if attempt == 0 { seed } else { mix_seed(&[seed, attempt as u64]) };
            let check = row(s, fault)?;
            attempt += 1;
            if check.admissible() || attempt == MAX_ATTEMPTS {
                rows.push(SuiteRow {
                    name,
                    check,
                    attempts: attempt,
                });
                break;
            }
        }
    }
    Ok(rows)
}
