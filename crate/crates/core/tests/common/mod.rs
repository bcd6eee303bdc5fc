//! Independent f64 reference implementation used as a test oracle.
//!
//! Shares no code with the library's layers: parameters are copied out of a
//! bundle into plain `f64` vectors and the forward pass is written from the
//! textbook definitions.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dendron::hierarchy::{ModelBundle, TaskId};
use dendron::tensor_nn::FeatureExtractorSpec;

#[derive(Clone)]
pub struct RefNet {
    pub spec: FeatureExtractorSpec,
    /// Per block `(filters, kernel)`; weights are `[f][c][k]`.
    pub blocks: Vec<(usize, usize)>,
    /// Per head, per layer `(out, in)`.
    pub heads: Vec<(TaskId, Vec<(usize, usize)>)>,
    /// All parameters, in the library's order: extractor blocks (weights,
    /// bias), then heads by task (weights, bias per layer).
    pub params: Vec<f64>,
}

/// Which side of every ReLU and which max-pool winner a pass took.
pub type Pattern = Vec<u32>;

impl RefNet {
    pub fn from_bundle(b: &ModelBundle) -> Self {
        let fe = b.feature_extractor();
        let mut params = Vec::new();
        let mut blocks = Vec::new();
        for l in fe.layers() {
            blocks.push((l.spec.num_filters, l.spec.kernel_size));
            params.extend(l.weights.data().iter().map(|&v| v as f64));
            params.extend(l.bias.data().iter().map(|&v| v as f64));
        }
        let mut heads = Vec::new();
        for (t, h) in b.heads() {
            let mut dims = Vec::new();
            for l in h.layers() {
                dims.push((l.weights.shape()[0], l.weights.shape()[1]));
                params.extend(l.weights.data().iter().map(|&v| v as f64));
                params.extend(l.bias.data().iter().map(|&v| v as f64));
            }
            heads.push((*t, dims));
        }
        Self {
            spec: fe.spec().clone(),
            blocks,
            heads,
            params,
        }
    }

    /// Feature vector plus the activation pattern.
    pub fn features(&self, p: &[f64], window: &[f64], pat: &mut Pattern) -> (Vec<f64>, usize) {
        let mut x = window.to_vec();
        let (mut ch, mut len) = (self.spec.input_channels, self.spec.window_len);
        let mut off = 0;
        for (bi, &(nf, k)) in self.blocks.iter().enumerate() {
            let pool = self.spec.blocks[bi].pool_size;
            let w = &p[off..off + nf * ch * k];
            let b = &p[off + nf * ch * k..off + nf * ch * k + nf];
            off += nf * ch * k + nf;
            let cl = len - k + 1;
            let mut relu = vec![0.0; nf * cl];
            for f in 0..nf {
                for t in 0..cl {
                    let mut s = b[f];
                    for c in 0..ch {
                        for j in 0..k {
                            s += w[(f * ch + c) * k + j] * x[c * len + t + j];
                        }
                    }
                    pat.push((s > 0.0) as u32);
                    relu[f * cl + t] = if s > 0.0 { s } else { 0.0 };
                }
            }
            let pl = cl / pool;
            let mut out = vec![0.0; nf * pl];
            for f in 0..nf {
                for q in 0..pl {
                    let mut arg = 0;
                    for j in 1..pool {
                        if relu[f * cl + q * pool + j] > relu[f * cl + q * pool + arg] {
                            arg = j;
                        }
                    }
                    pat.push(arg as u32);
                    out[f * pl + q] = relu[f * cl + q * pool + arg];
                }
            }
            x = out;
            ch = nf;
            len = pl;
        }
        (x, off)
    }

    /// Softmax output of every head.
    pub fn forward(&self, p: &[f64], window: &[f64], pat: &mut Pattern) -> BTreeMap<TaskId, Vec<f64>> {
        let (feat, mut off) = self.features(p, window, pat);
        let mut out = BTreeMap::new();
        for (t, dims) in &self.heads {
            let mut x = feat.clone();
            for (u, &(o, i)) in dims.iter().enumerate() {
                let w = &p[off..off + o * i];
                let b = &p[off + o * i..off + o * i + o];
                off += o * i + o;
                let mut z: Vec<f64> = (0..o)
                    .map(|r| b[r] + (0..i).map(|c| w[r * i + c] * x[c]).sum::<f64>())
                    .collect();
                if u + 1 < dims.len() {
                    for v in &mut z {
                        pat.push((*v > 0.0) as u32);
                        *v = v.max(0.0);
                    }
                }
                x = z;
            }
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.insert(*t, e.iter().map(|v| v / s).collect());
        }
        out
    }

    /// `Σ α_t · (−ln p_t[y_t])` with fixed weights.
    pub fn loss(
        &self,
        p: &[f64],
        window: &[f64],
        labels: &BTreeMap<TaskId, usize>,
        alphas: &BTreeMap<TaskId, f64>,
        pat: &mut Pattern,
    ) -> f64 {
        let probs = self.forward(p, window, pat);
        probs
            .iter()
            .map(|(t, pr)| alphas[t] * -pr[labels[t]].max(1e-300).ln())
            .sum()
    }
}

/// Brute-force peak of consecutive pairs.
pub fn brute_pair_peak(sizes: &[usize]) -> usize {
    let mut best = 0;
    for i in 0..sizes.len() {
        for j in 0..sizes.len() {
            if j == i + 1 {
                best = best.max(4 * (sizes[i] + sizes[j]));
            }
        }
    }
    best
}
