//! Neural building blocks on top of the tape.

mod attention;
mod cnn;
mod kan;
mod layers;
mod params;
mod positional;
pub mod spline;

pub use attention::{EncoderBlock, MultiHeadSelfAttention, TransformerEncoder, TransformerEncoderConfig};
pub use cnn::{CnnBackbone, CnnBackboneConfig};
pub use kan::{kan_fusion_eq5, FusionActivation, KanEq5, KanSplineLayer, KanSplineLayerConfig};
pub use layers::{Conv2d, LayerNorm, Linear};
pub use params::{Param, ParamGroup, ParamId, ParamSet};
pub use positional::{positional_encoding, PositionalEncodingTable};

/// Train mode enables dropout; eval mode is a pure function of the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
