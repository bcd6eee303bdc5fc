//! Minimal deterministic neural-network kernel.
//!
//! Everything here is single-threaded and allocation-order deterministic: the same
//! parameters and input always produce bit-identical activations and gradients.
//! Signals are stored channel-major (`channels × length`), dense weights row-major
//! (`out × in`).

mod layers;
mod network;
mod sgd;

pub use layers::{
    conv_block_backward, conv_block_forward, cross_entropy, dense_backward, dense_forward,
    softmax, softmax_cross_entropy_grad, ConvCache, ConvGrads, DenseGrads, PROB_FLOOR,
};
pub use network::{
    BlockShape, ConvBlockSpec, ConvLayer, DenseLayer, ExtractorCache, FeatureExtractor,
    FeatureExtractorSpec, Head, HeadCache, HeadSpec, NetworkGrads,
};
pub use sgd::{sgd_step, SgdState};

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                context: "tensor construction",
                dimension: "element count",
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// One-dimensional tensor over `data`.
    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flatten to a vector, keeping the data order.
    pub fn flatten(mut self) -> Self {
        self.shape = vec![self.data.len()];
        self
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Hooks threaded through forward passes for exact operation accounting.
///
/// The unit implementation compiles away; [`OpCounter`] tallies every
/// multiply-accumulate actually executed.
pub trait Instrument {
    fn macc(&mut self, _n: u64) {}
    fn feature_pass(&mut self) {}
    fn head_pass(&mut self) {}
}

impl Instrument for () {}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    pub maccs: u64,
    pub feature_passes: u64,
    pub head_passes: u64,
}

impl Instrument for OpCounter {
    fn macc(&mut self, n: u64) {
        self.maccs += n;
    }

    fn feature_pass(&mut self) {
        self.feature_passes += 1;
    }

    fn head_pass(&mut self) {
        self.head_passes += 1;
    }
}
