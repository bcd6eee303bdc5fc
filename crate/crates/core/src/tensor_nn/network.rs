use rand::Rng;

use super::layers::{
    conv_block_backward, conv_block_forward, dense_backward, dense_forward, softmax, ConvCache,
};
use super::{Instrument, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvBlockSpec {
    pub kernel_size: usize,
    pub num_filters: usize,
    pub pool_size: usize,
}

/// Shapes seen by one convolution block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub in_len: usize,
    pub conv_len: usize,
    pub out_channels: usize,
    pub out_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureExtractorSpec {
    pub input_channels: usize,
    pub window_len: usize,
    pub blocks: Vec<ConvBlockSpec>,
}

impl FeatureExtractorSpec {
    /// Propagate shapes through every block, failing on the first block whose
    /// kernel does not fit or whose pooled output is empty.
    pub fn block_shapes(&self) -> Result<Vec<BlockShape>> {
        if self.input_channels == 0 || self.window_len == 0 {
            return Err(Error::Precondition(
                "feature extractor needs at least one channel and one sample".into(),
            ));
        }
        let (mut channels, mut len) = (self.input_channels, self.window_len);
        let mut shapes = Vec::with_capacity(self.blocks.len());
        for (w, b) in self.blocks.iter().enumerate() {
            if b.kernel_size == 0 || b.num_filters == 0 || b.pool_size == 0 {
                return Err(Error::Precondition(format!(
                    "block {w}: kernel_size, num_filters and pool_size must be positive"
                )));
            }
            if b.kernel_size > len {
                return Err(Error::Precondition(format!(
                    "block {w}: kernel size {} exceeds signal length {len}",
                    b.kernel_size
                )));
            }
            let conv_len = len - b.kernel_size + 1;
            let out_len = conv_len / b.pool_size;
            if out_len == 0 {
                return Err(Error::Precondition(format!(
                    "block {w}: pool size {} exceeds convolution length {conv_len}",
                    b.pool_size
                )));
            }
            shapes.push(BlockShape {
                in_channels: channels,
                in_len: len,
                conv_len,
                out_channels: b.num_filters,
                out_len,
            });
            channels = b.num_filters;
            len = out_len;
        }
        Ok(shapes)
    }

    /// Flattened output size, i.e. the input width of every head.
    pub fn feature_dim(&self) -> Result<usize> {
        let shapes = self.block_shapes()?;
        Ok(match shapes.last() {
            Some(s) => s.out_channels * s.out_len,
            None => self.input_channels * self.window_len,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeadSpec {
    /// Output width of each dense layer; the last one is the class count.
    pub layer_widths: Vec<usize>,
}

impl HeadSpec {
    pub fn single_layer(num_classes: usize) -> Self {
        Self {
            layer_widths: vec![num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.layer_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::Precondition("head needs at least one dense layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Precondition("dense layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `(in, out)` of every dense layer given the feature width.
    pub fn layer_dims(&self, feature_dim: usize) -> Vec<(usize, usize)> {
        let mut prev = feature_dim;
        self.layer_widths
            .iter()
            .map(|&w| {
                let d = (prev, w);
                prev = w;
                d
            })
            .collect()
    }
}

fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches generated length")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvBlockSpec,
    /// `filters × in_channels × kernel`.
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Parameter gradients in [`FeatureExtractor::params`] / [`Head::params`]
/// order, plus the gradient with respect to the slice's input.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub params: Vec<Tensor>,
    pub d_input: Tensor,
}

pub type ExtractorCache = Vec<ConvCache>;

/// The shared convolutional trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    spec: FeatureExtractorSpec,
    layers: Vec<ConvLayer>,
    feature_dim: usize,
}

impl FeatureExtractor {
    pub fn init<R: Rng>(spec: FeatureExtractorSpec, rng: &mut R) -> Result<Self> {
        let shapes = spec.block_shapes()?;
        let layers = spec
            .blocks
            .iter()
            .zip(&shapes)
            .map(|(b, s)| ConvLayer {
                spec: *b,
                weights: glorot_uniform(
                    rng,
                    &[b.num_filters, s.in_channels, b.kernel_size],
                    s.in_channels * b.kernel_size,
                    b.num_filters * b.kernel_size,
                ),
                bias: Tensor::zeros(&[b.num_filters]),
            })
            .collect();
        Self::from_layers(spec, layers)
    }

    pub fn from_layers(spec: FeatureExtractorSpec, layers: Vec<ConvLayer>) -> Result<Self> {
        let shapes = spec.block_shapes()?;
        if layers.len() != shapes.len() {
            return Err(Error::Shape {
                context: "feature extractor",
                dimension: "block count",
                expected: shapes.len(),
                found: layers.len(),
            });
        }
        for ((layer, s), b) in layers.iter().zip(&shapes).zip(&spec.blocks) {
            let want = [b.num_filters, s.in_channels, b.kernel_size];
            if layer.spec != *b || layer.weights.shape() != want {
                return Err(Error::Shape {
                    context: "feature extractor",
                    dimension: "conv weight elements",
                    expected: want.iter().product(),
                    found: layer.weights.len(),
                });
            }
            if layer.bias.len() != b.num_filters {
                return Err(Error::Shape {
                    context: "feature extractor",
                    dimension: "conv bias length",
                    expected: b.num_filters,
                    found: layer.bias.len(),
                });
            }
        }
        let feature_dim = spec.feature_dim()?;
        Ok(Self {
            spec,
            layers,
            feature_dim,
        })
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward<I: Instrument>(&self, window: &Tensor, inst: &mut I) -> Result<(Tensor, ExtractorCache)> {
        let want = [self.spec.input_channels, self.spec.window_len];
        if window.shape() != want {
            let (dimension, expected, found) = if window.shape().len() != 2 {
                ("window rank", 2, window.shape().len())
            } else if window.shape()[0] != want[0] {
                ("window channels", want[0], window.shape()[0])
            } else {
                ("window length", want[1], window.shape()[1])
            };
            return Err(Error::Shape {
                context: "feature extractor",
                dimension,
                expected,
                found,
            });
        }
        if !window.is_finite() {
            return Err(Error::NonFinite("input window".into()));
        }
        inst.feature_pass();
        let mut x = window.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = conv_block_forward(&x, &layer.spec, &layer.weights, &layer.bias, inst)?;
            caches.push(cache);
            x = y;
        }
        Ok((x.flatten(), caches))
    }

    /// Feature vector for `window`, without keeping caches.
    pub fn features(&self, window: &Tensor) -> Result<Tensor> {
        self.forward(window, &mut ()).map(|(f, _)| f)
    }

    pub fn backward(&self, caches: &ExtractorCache, d_feature: &Tensor) -> Result<NetworkGrads> {
        if caches.len() != self.layers.len() {
            return Err(Error::Precondition(
                "backward called without the forward caches for every block".into(),
            ));
        }
        if d_feature.len() != self.feature_dim {
            return Err(Error::Shape {
                context: "feature extractor backward",
                dimension: "feature gradient length",
                expected: self.feature_dim,
                found: d_feature.len(),
            });
        }
        let mut params = vec![Tensor::zeros(&[0]); 2 * self.layers.len()];
        let mut upstream = d_feature.clone();
        for (w, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let g = conv_block_backward(cache, &layer.spec, &layer.weights, &upstream)?;
            params[2 * w] = g.d_weights;
            params[2 * w + 1] = g.d_bias;
            upstream = g.d_input;
        }
        Ok(NetworkGrads {
            params,
            d_input: upstream,
        })
    }

    /// Weights then bias of each block, in order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(w, l)| {
                [
                    (format!("fe.block{w}.weights"), &mut l.weights),
                    (format!("fe.block{w}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers.iter().map(|l| l.bias.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Input seen by each dense layer.
    inputs: Vec<Tensor>,
    /// Pre-activation of each dense layer (the last one holds logits).
    pre_activations: Vec<Tensor>,
}

/// A dense classifier over the shared features: ReLU between layers, softmax at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    spec: HeadSpec,
    layers: Vec<DenseLayer>,
}

impl Head {
    pub fn init<R: Rng>(spec: HeadSpec, input_dim: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims(input_dim)
            .into_iter()
            .map(|(i, o)| DenseLayer {
                weights: glorot_uniform(rng, &[o, i], i, o),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: HeadSpec, input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims(input_dim);
        if dims.len() != layers.len() {
            return Err(Error::Shape {
                context: "head",
                dimension: "layer count",
                expected: dims.len(),
                found: layers.len(),
            });
        }
        for ((i, o), l) in dims.iter().zip(&layers) {
            if l.weights.shape() != [*o, *i] {
                return Err(Error::Shape {
                    context: "head",
                    dimension: "dense weight elements",
                    expected: i * o,
                    found: l.weights.len(),
                });
            }
            if l.bias.len() != *o {
                return Err(Error::Shape {
                    context: "head",
                    dimension: "dense bias length",
                    expected: *o,
                    found: l.bias.len(),
                });
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    /// Class probabilities for one feature vector.
    pub fn forward<I: Instrument>(&self, feature: &Tensor, inst: &mut I) -> Result<(Tensor, HeadCache)> {
        inst.head_pass();
        let mut cache = HeadCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut x = feature.clone();
        for (u, layer) in self.layers.iter().enumerate() {
            let z = dense_forward(&x, &layer.weights, &layer.bias, inst)?;
            cache.inputs.push(x);
            x = if u + 1 < self.layers.len() {
                Tensor::vector(z.data().iter().map(|v| v.max(0.0)).collect())
            } else {
                z.clone()
            };
            cache.pre_activations.push(z);
        }
        let probs = softmax(&x)?;
        Ok((probs, cache))
    }

    pub fn predict(&self, feature: &Tensor) -> Result<Tensor> {
        self.forward(feature, &mut ()).map(|(p, _)| p)
    }

    /// Backpropagate a gradient with respect to the logits.
    pub fn backward(&self, cache: &HeadCache, d_logits: &Tensor) -> Result<NetworkGrads> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Precondition(
                "backward called without the forward cache for every dense layer".into(),
            ));
        }
        let mut params = vec![Tensor::zeros(&[0]); 2 * self.layers.len()];
        let mut upstream = d_logits.clone();
        for u in (0..self.layers.len()).rev() {
            if u + 1 < self.layers.len() {
                for (g, z) in upstream
                    .data_mut()
                    .iter_mut()
                    .zip(cache.pre_activations[u].data())
                {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let g = dense_backward(&cache.inputs[u], &self.layers[u].weights, &upstream)?;
            params[2 * u] = g.d_weights;
            params[2 * u + 1] = g.d_bias;
            upstream = g.d_input;
        }
        Ok(NetworkGrads {
            params,
            d_input: upstream,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(u, l)| {
                [
                    (format!("{prefix}.dense{u}.weights"), &mut l.weights),
                    (format!("{prefix}.dense{u}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers.iter().map(|l| l.bias.len()).sum()
    }
}
