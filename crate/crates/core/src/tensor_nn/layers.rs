use super::{Instrument, Tensor};
use crate::error::{Error, Result};
use crate::tensor_nn::ConvBlockSpec;

/// Floor applied to the target probability before taking its logarithm.
pub const PROB_FLOOR: f32 = 1e-12;

/// Everything a convolution block needs to run its backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub input: Tensor,
    /// Convolution output before ReLU, `filters × conv_len`.
    pub pre_activation: Tensor,
    /// For each pooled output, the winning position in its pre-activation row.
    pub pool_argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
    pub d_input: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
    pub d_input: Tensor,
}

fn check(context: &'static str, dimension: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            dimension,
            expected,
            found,
        })
    }
}

/// Valid stride-1 1-D convolution across all input channels, ReLU, then
/// non-overlapping max pooling. Trailing convolution outputs that do not fill a
/// whole pooling window are dropped.
pub fn conv_block_forward<I: Instrument>(
    input: &Tensor,
    spec: &ConvBlockSpec,
    weights: &Tensor,
    bias: &Tensor,
    inst: &mut I,
) -> Result<(Tensor, ConvCache)> {
    const CTX: &str = "conv block forward";
    check(CTX, "input rank", 2, input.shape().len())?;
    let (channels, len) = (input.shape()[0], input.shape()[1]);
    let (filters, k, pool) = (spec.num_filters, spec.kernel_size, spec.pool_size);
    check(CTX, "weight rank", 3, weights.shape().len())?;
    check(CTX, "weight filters", filters, weights.shape()[0])?;
    check(CTX, "weight channels", channels, weights.shape()[1])?;
    check(CTX, "weight kernel", k, weights.shape()[2])?;
    check(CTX, "bias length", filters, bias.len())?;
    if k == 0 || pool == 0 {
        return Err(Error::Precondition(
            "kernel_size and pool_size must be positive".into(),
        ));
    }
    if len < k {
        return Err(Error::Shape {
            context: CTX,
            dimension: "input length (must be >= kernel size)",
            expected: k,
            found: len,
        });
    }

    let conv_len = len - k + 1;
    let pooled_len = conv_len / pool;
    let x = input.data();
    let w = weights.data();
    let mut pre = vec![0.0f32; filters * conv_len];
    for f in 0..filters {
        for t in 0..conv_len {
            let mut acc = bias.data()[f];
            for c in 0..channels {
                let w_row = &w[(f * channels + c) * k..(f * channels + c + 1) * k];
                let x_row = &x[c * len + t..c * len + t + k];
                for (wv, xv) in w_row.iter().zip(x_row) {
                    acc += wv * xv;
                    inst.macc(1);
                }
            }
            pre[f * conv_len + t] = acc;
        }
    }

    let mut out = vec![0.0f32; filters * pooled_len];
    let mut pool_argmax = vec![0usize; filters * pooled_len];
    for f in 0..filters {
        let row = &pre[f * conv_len..(f + 1) * conv_len];
        for p in 0..pooled_len {
            let mut best = p * pool;
            let mut best_val = row[best].max(0.0);
            for t in p * pool + 1..(p + 1) * pool {
                let v = row[t].max(0.0);
                if v > best_val {
                    best = t;
                    best_val = v;
                }
            }
            out[f * pooled_len + p] = best_val;
            pool_argmax[f * pooled_len + p] = best;
        }
    }

    let output = Tensor::new(vec![filters, pooled_len], out)?;
    let cache = ConvCache {
        input: input.clone(),
        pre_activation: Tensor::new(vec![filters, conv_len], pre)?,
        pool_argmax,
    };
    Ok((output, cache))
}

pub fn conv_block_backward(
    cache: &ConvCache,
    spec: &ConvBlockSpec,
    weights: &Tensor,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    const CTX: &str = "conv block backward";
    let (channels, len) = (cache.input.shape()[0], cache.input.shape()[1]);
    let (filters, k) = (spec.num_filters, spec.kernel_size);
    let conv_len = cache.pre_activation.shape()[1];
    check(CTX, "upstream length", cache.pool_argmax.len(), upstream.len())?;
    let pooled_len = cache.pool_argmax.len() / filters.max(1);

    let pre = cache.pre_activation.data();
    let mut d_pre = vec![0.0f32; filters * conv_len];
    for f in 0..filters {
        for p in 0..pooled_len {
            let idx = f * pooled_len + p;
            let t = cache.pool_argmax[idx];
            if pre[f * conv_len + t] > 0.0 {
                d_pre[f * conv_len + t] += upstream.data()[idx];
            }
        }
    }

    let x = cache.input.data();
    let w = weights.data();
    let mut d_w = vec![0.0f32; filters * channels * k];
    let mut d_b = vec![0.0f32; filters];
    let mut d_x = vec![0.0f32; channels * len];
    for f in 0..filters {
        for t in 0..conv_len {
            let g = d_pre[f * conv_len + t];
            if g == 0.0 {
                continue;
            }
            d_b[f] += g;
            for c in 0..channels {
                let base = (f * channels + c) * k;
                for j in 0..k {
                    d_w[base + j] += g * x[c * len + t + j];
                    d_x[c * len + t + j] += g * w[base + j];
                }
            }
        }
    }

    Ok(ConvGrads {
        d_weights: Tensor::new(vec![filters, channels, k], d_w)?,
        d_bias: Tensor::vector(d_b),
        d_input: Tensor::new(vec![channels, len], d_x)?,
    })
}

/// `out[j] = Σ_i weights[j, i] · input[i] + bias[j]`.
pub fn dense_forward<I: Instrument>(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    inst: &mut I,
) -> Result<Tensor> {
    const CTX: &str = "dense forward";
    check(CTX, "weight rank", 2, weights.shape().len())?;
    let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
    check(CTX, "input length", cols, input.len())?;
    check(CTX, "bias length", rows, bias.len())?;
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(cols)
        .zip(bias.data())
        .map(|(row, &b)| {
            let mut acc = b;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
                inst.macc(1);
            }
            acc
        })
        .collect();
    Ok(Tensor::vector(out))
}

/// Gradients of a dense layer given the input it saw and the upstream gradient
/// with respect to its output.
pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    const CTX: &str = "dense backward";
    let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
    check(CTX, "upstream length", rows, upstream.len())?;
    check(CTX, "input length", cols, input.len())?;
    let x = input.data();
    let g = upstream.data();
    let w = weights.data();
    let mut d_w = vec![0.0f32; rows * cols];
    let mut d_x = vec![0.0f32; cols];
    for j in 0..rows {
        if g[j] == 0.0 {
            continue;
        }
        for i in 0..cols {
            d_w[j * cols + i] = g[j] * x[i];
            d_x[i] += g[j] * w[j * cols + i];
        }
    }
    Ok(DenseGrads {
        d_weights: Tensor::new(vec![rows, cols], d_w)?,
        d_bias: Tensor::vector(g.to_vec()),
        d_input: Tensor::new(input.shape().to_vec(), d_x)?,
    })
}

/// Max-subtracted softmax. Accumulates in `f64` so the result sums to one
/// within `f32` rounding.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.is_empty() {
        return Err(Error::Precondition("softmax over zero classes".into()));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits
        .data()
        .iter()
        .fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = logits
        .data()
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor::new(
        logits.shape().to_vec(),
        exps.iter().map(|e| (e / sum) as f32).collect(),
    )?)
}

pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f32> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            index: label,
            classes: probs.len(),
        });
    }
    Ok(-probs.data()[label].max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), label)` with respect to `z`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, label: usize) -> Result<Tensor> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            index: label,
            classes: probs.len(),
        });
    }
    let mut g = probs.clone();
    g.data_mut()[label] -= 1.0;
    Ok(g)
}
