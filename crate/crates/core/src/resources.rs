//! Weight, activation and MACC accounting for three ways of deploying the same
//! task set: one flat classifier, one full network per task, and a shared
//! extractor with per-task heads.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hierarchy::{ModelBundle, TaskId, TaskPath};
use crate::tensor_nn::{FeatureExtractorSpec, HeadSpec};

pub const BYTES_PER_VALUE: usize = 4;

/// Multiply-accumulates of one extractor pass:
/// `Σ conv_len · filters · kernel · in_channels` over blocks.
pub fn extractor_macc(spec: &FeatureExtractorSpec) -> Result<usize> {
    Ok(spec
        .block_shapes()?
        .iter()
        .zip(&spec.blocks)
        .map(|(s, b)| s.conv_len * b.num_filters * b.kernel_size * s.in_channels)
        .sum())
}

/// `Σ in · out` over dense layers.
pub fn head_macc(spec: &HeadSpec, feature_dim: usize) -> usize {
    spec.layer_dims(feature_dim).iter().map(|(i, o)| i * o).sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaccCounts {
    pub feature_extractor: usize,
    pub heads: BTreeMap<TaskId, usize>,
}

impl MaccCounts {
    /// Extractor once plus every head on the path.
    pub fn path(&self, path: &TaskPath) -> usize {
        self.feature_extractor + path.tasks().map(|t| self.heads[&t]).sum::<usize>()
    }
}

pub fn count_macc(bundle: &ModelBundle) -> Result<MaccCounts> {
    let fe = bundle.feature_extractor();
    Ok(MaccCounts {
        feature_extractor: extractor_macc(fe.spec())?,
        heads: bundle
            .heads()
            .iter()
            .map(|(t, h)| (*t, head_macc(h.spec(), fe.feature_dim())))
            .collect(),
    })
}

/// Element counts of every activation from the input window to the head
/// output. Pooling with size 1 is the identity and adds no buffer.
pub fn activation_sizes(fe: &FeatureExtractorSpec, head: &HeadSpec) -> Result<Vec<usize>> {
    let mut sizes = vec![fe.input_channels * fe.window_len];
    for (s, b) in fe.block_shapes()?.iter().zip(&fe.blocks) {
        sizes.push(s.out_channels * s.conv_len);
        if b.pool_size > 1 {
            sizes.push(s.out_channels * s.out_len);
        }
    }
    sizes.extend(&head.layer_widths);
    Ok(sizes)
}

/// Largest sum of two consecutive activations, in bytes.
pub fn pairwise_peak(sizes: &[usize]) -> usize {
    match sizes {
        [] => 0,
        [only] => only * BYTES_PER_VALUE,
        _ => sizes
            .windows(2)
            .map(|w| (w[0] + w[1]) * BYTES_PER_VALUE)
            .max()
            .unwrap_or(0),
    }
}

/// Peak activation memory of running the extractor and then each head of
/// `path` in turn.
pub fn activation_peak(bundle: &ModelBundle, path: &[TaskId]) -> Result<usize> {
    let fe = bundle.feature_extractor().spec();
    let mut peak = pairwise_peak(&activation_sizes(fe, &HeadSpec { layer_widths: vec![] })?);
    for t in path {
        peak = peak.max(pairwise_peak(&activation_sizes(fe, bundle.head(*t)?.spec())?));
    }
    Ok(peak)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub name: String,
    pub weights: usize,
    pub biases: usize,
    pub macc: usize,
}

impl Component {
    pub fn params(&self) -> usize {
        self.weights + self.biases
    }

    pub fn bytes(&self) -> usize {
        self.params() * BYTES_PER_VALUE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentTotals {
    pub weights: usize,
    pub params: usize,
    pub macc_worst: usize,
    pub macc_best: usize,
    /// Mean over routes when every task picks each label with equal probability.
    pub macc_expected: f64,
}

impl DeploymentTotals {
    pub fn bytes(&self) -> usize {
        self.params * BYTES_PER_VALUE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceReport {
    /// `fe`, then one row per head.
    pub components: Vec<Component>,
    pub macc: MaccCounts,
    /// Peak activation bytes over every root-to-terminal route.
    pub activation_peak_bytes: usize,
    pub worst_path: Vec<TaskId>,
    pub single_model: DeploymentTotals,
    pub hierarchical: DeploymentTotals,
    pub dendron: DeploymentTotals,
}

/// Cost of a route under each deployment plus its uniform-routing probability.
fn path_stats(
    paths: &[TaskPath],
    cost: impl Fn(&TaskPath) -> usize,
    k: impl Fn(TaskId) -> usize,
) -> (usize, usize, f64) {
    let mut worst = 0;
    let mut best = usize::MAX;
    let mut expected = 0.0;
    for p in paths {
        let c = cost(p);
        worst = worst.max(c);
        best = best.min(c);
        let prob: f64 = p.tasks().map(|t| 1.0 / k(t) as f64).product();
        expected += prob * c as f64;
    }
    (worst, best, expected)
}

/// Resource totals of the bundle and of the two alternatives built from the
/// same extractor and head specs. The flat classifier reuses the root head's
/// hidden widths with one output per terminal label; the per-task deployment
/// gives every task its own extractor copy.
pub fn compare_deployments(bundle: &ModelBundle) -> Result<ResourceReport> {
    let graph = bundle.graph();
    let fe = bundle.feature_extractor();
    let feature_dim = fe.feature_dim();
    let macc = count_macc(bundle)?;

    let fe_row = Component {
        name: "fe".into(),
        weights: fe.weight_count(),
        biases: fe.bias_count(),
        macc: macc.feature_extractor,
    };
    let head_rows: Vec<(TaskId, Component)> = bundle
        .heads()
        .iter()
        .map(|(t, h)| {
            (
                *t,
                Component {
                    name: format!("head.{t}"),
                    weights: h.weight_count(),
                    biases: h.bias_count(),
                    macc: macc.heads[t],
                },
            )
        })
        .collect();
    let head_of = |t: TaskId| &head_rows[t.0 - 1].1;

    let paths = graph.paths()?;
    if paths.is_empty() {
        return Err(Error::Precondition("hierarchy has no terminal route".into()));
    }
    let k = |t: TaskId| graph.labels(t).map(|l| l.k()).unwrap_or(1);
    let n = graph.n();

    let sum_w: usize = head_rows.iter().map(|(_, c)| c.weights).sum();
    let sum_p: usize = head_rows.iter().map(|(_, c)| c.params()).sum();

    let (dw, db, de) = path_stats(&paths, |p| macc.path(p), k);
    let dendron = DeploymentTotals {
        weights: fe_row.weights + sum_w,
        params: fe_row.params() + sum_p,
        macc_worst: dw,
        macc_best: db,
        macc_expected: de,
    };

    let (hw, hb, he) = path_stats(
        &paths,
        |p| p.tasks().map(|t| fe_row.macc + head_of(t).macc).sum(),
        k,
    );
    let hierarchical = DeploymentTotals {
        weights: n * fe_row.weights + sum_w,
        params: n * fe_row.params() + sum_p,
        macc_worst: hw,
        macc_best: hb,
        macc_expected: he,
    };

    let root = graph.root_task()?;
    let mut flat = bundle.head(root)?.spec().clone();
    *flat.layer_widths.last_mut().expect("validated head has layers") = graph.composite_labels().len();
    let flat_w = head_macc(&flat, feature_dim);
    let flat_b: usize = flat.layer_widths.iter().sum();
    let flat_macc = fe_row.macc + flat_w;
    let single_model = DeploymentTotals {
        weights: fe_row.weights + flat_w,
        params: fe_row.params() + flat_w + flat_b,
        macc_worst: flat_macc,
        macc_best: flat_macc,
        macc_expected: flat_macc as f64,
    };

    let worst = paths
        .iter()
        .max_by_key(|p| (macc.path(p), std::cmp::Reverse(p.steps.len())))
        .expect("non-empty");
    let mut peak = 0;
    for p in &paths {
        let tasks: Vec<TaskId> = p.tasks().collect();
        peak = peak.max(activation_peak(bundle, &tasks)?);
    }

    let mut components = vec![fe_row];
    components.extend(head_rows.into_iter().map(|(_, c)| c));
    Ok(ResourceReport {
        components,
        macc,
        activation_peak_bytes: peak,
        worst_path: worst.tasks().collect(),
        single_model,
        hierarchical,
        dendron,
    })
}

/// One `row` line of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineRow {
    pub name: String,
    pub params: usize,
    pub bytes: usize,
    pub macc: usize,
}

impl ResourceReport {
    pub fn deployments(&self) -> [(&'static str, &DeploymentTotals); 3] {
        [
            ("single_model", &self.single_model),
            ("hierarchical", &self.hierarchical),
            ("dendron", &self.dendron),
        ]
    }

    /// `row\t<name>\t<params>\t<bytes>\t<macc>` per component and deployment
    /// (deployment MACC is the worst route).
    pub fn machine_rows(&self) -> Vec<MachineRow> {
        let mut rows: Vec<MachineRow> = self
            .components
            .iter()
            .map(|c| MachineRow {
                name: c.name.clone(),
                params: c.params(),
                bytes: c.bytes(),
                macc: c.macc,
            })
            .collect();
        for (name, d) in self.deployments() {
            rows.push(MachineRow {
                name: name.into(),
                params: d.params,
                bytes: d.bytes(),
                macc: d.macc_worst,
            });
        }
        rows
    }

    pub fn render_rows(&self) -> String {
        let mut s = String::new();
        for r in self.machine_rows() {
            let _ = writeln!(s, "row\t{}\t{}\t{}\t{}", r.name, r.params, r.bytes, r.macc);
        }
        s
    }

    /// Every `row` line of `text`; other lines are ignored.
    pub fn parse_rows(text: &str) -> Result<Vec<MachineRow>> {
        text.lines()
            .filter(|l| l.starts_with("row\t"))
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad number `{s}` in `{l}`")))
                };
                match f.as_slice() {
                    [_, name, params, bytes, macc] => Ok(MachineRow {
                        name: name.to_string(),
                        params: num(params)?,
                        bytes: num(bytes)?,
                        macc: num(macc)?,
                    }),
                    _ => Err(Error::Format(format!("expected 5 fields in `{l}`"))),
                }
            })
            .collect()
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>8} {:>10} {:>12}",
            "component", "weights", "biases", "bytes", "macc"
        );
        for c in &self.components {
            let _ = writeln!(
                s,
                "{:<14} {:>10} {:>8} {:>10} {:>12}",
                c.name, c.weights, c.biases, c.bytes(), c.macc
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>10} {:>10} {:>12} {:>12} {:>14}",
            "deployment", "weights", "params", "bytes", "macc_worst", "macc_best", "macc_expected"
        );
        for (name, d) in self.deployments() {
            let _ = writeln!(
                s,
                "{:<14} {:>10} {:>10} {:>10} {:>12} {:>12} {:>14.1}",
                name,
                d.weights,
                d.params,
                d.bytes(),
                d.macc_worst,
                d.macc_best,
                d.macc_expected
            );
        }
        let path: Vec<String> = self.worst_path.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(s, "\nworst route: {}", path.join(" -> "));
        let _ = writeln!(s, "activation peak: {} bytes", self.activation_peak_bytes);
        s
    }
}
