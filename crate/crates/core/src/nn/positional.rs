use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal position table: even columns `sin(pos / 10000^(2i/d))`, odd
/// columns `cos` of the same angle.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncodingTable {
    pub seq_len: usize,
    pub d: usize,
    pub table: Tensor<f64>,
}

impl PositionalEncodingTable {
    pub fn get(&self, pos: usize, col: usize) -> f64 {
        self.table.data()[pos * self.d + col]
    }
}

pub fn positional_encoding(seq_len: usize, d: usize) -> Result<PositionalEncodingTable> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(alloc::format!("positional encoding dimension must be even, got {d}")));
    }
    if seq_len == 0 {
        return Err(Error::config("positional encoding needs at least one position"));
    }
    let mut data = Vec::with_capacity(seq_len * d);
    for pos in 0..seq_len {
        for i in 0..d / 2 {
            let angle = pos as f64 / Float::powf(10000.0f64, (2 * i) as f64 / d as f64);
            data.push(Float::sin(angle));
            data.push(Float::cos(angle));
        }
    }
    Ok(PositionalEncodingTable {
        seq_len,
        d,
        table: Tensor::new(&[seq_len, d], data)?,
    })
}
