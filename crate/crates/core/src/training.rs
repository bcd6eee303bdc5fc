//! Joint training of the shared extractor and every head with the
//! activation-weighted multi-task loss `L = Σ_i α_i · L_i`.
//!
//! Each sample carries a label for every task: tasks on its root-to-terminal
//! path get the class that routes toward the terminal label, tasks off the
//! path get a surrogate class 0 whose loss is scaled by that task's α.
//! α is held constant during backpropagation.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{
    compute_alphas, infer_hierarchical, ModelBundle, TaskGraph, TaskId, TaskLabel,
};
use crate::tensor_nn::{
    cross_entropy, sgd_step, softmax_cross_entropy_grad, HeadCache, NetworkGrads, SgdState, Tensor,
};

/// A window with its terminal activity label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: Tensor,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelSample {
    pub window: Tensor,
    pub labels: BTreeMap<TaskId, TaskLabel>,
    pub terminal_label: String,
}

impl MultiLabelSample {
    pub fn new(graph: &TaskGraph, window: Tensor, terminal_label: &str) -> Result<Self> {
        Ok(Self {
            labels: derive_task_labels(graph, terminal_label)?,
            window,
            terminal_label: terminal_label.to_string(),
        })
    }

    pub fn from_windows(graph: &TaskGraph, windows: &[LabeledWindow]) -> Result<Vec<Self>> {
        windows
            .iter()
            .map(|w| Self::new(graph, w.window.clone(), &w.label))
            .collect()
    }
}

/// Per-task labels for a sample whose composite label is `terminal_label`.
///
/// A terminal reachable along two routes (a task attached under two parents)
/// uses the first route in depth-first class order.
pub fn derive_task_labels(graph: &TaskGraph, terminal_label: &str) -> Result<BTreeMap<TaskId, TaskLabel>> {
    let paths = graph.paths()?;
    let path = paths
        .iter()
        .find(|p| {
            let (t, i) = p.terminal();
            graph
                .labels(t)
                .map(|l| l.labels[i] == terminal_label)
                .unwrap_or(false)
        })
        .ok_or_else(|| Error::UnknownLabel(terminal_label.to_string()))?;
    let mut labels: BTreeMap<TaskId, TaskLabel> = graph
        .task_ids()
        .map(|t| (t, TaskLabel::OffPath { surrogate: 0 }))
        .collect();
    for &(t, i) in &path.steps {
        labels.insert(t, TaskLabel::OnPath(i));
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// Parent softmax scores, as the model currently predicts them.
    #[default]
    Predicted,
    /// Indicator of the parent's ground-truth label.
    TeacherForced,
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaMode::Predicted => "predicted",
            AlphaMode::TeacherForced => "teacher_forced",
        })
    }
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(AlphaMode::Predicted),
            "teacher_forced" | "teacher-forced" => Ok(AlphaMode::TeacherForced),
            other => Err(Error::Precondition(format!(
                "alpha_mode must be `predicted` or `teacher_forced`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLoss {
    pub alpha: f64,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub per_task: BTreeMap<TaskId, TaskLoss>,
}

/// Gradients of the joint loss for one sample.
#[derive(Debug, Clone)]
pub struct JointGradients {
    pub loss: JointLoss,
    /// `None` when the extractor is frozen.
    pub feature_extractor: Option<Vec<Tensor>>,
    pub heads: BTreeMap<TaskId, Vec<Tensor>>,
}

pub fn joint_loss(bundle: &ModelBundle, sample: &MultiLabelSample, mode: AlphaMode) -> Result<JointLoss> {
    let feature = bundle.feature_extractor().features(&sample.window)?;
    let outputs = crate::hierarchy::heads_on_feature(bundle, &feature)?;
    loss_from_outputs(bundle.graph(), &outputs, sample, mode)
}

fn loss_from_outputs(
    graph: &TaskGraph,
    outputs: &BTreeMap<TaskId, Tensor>,
    sample: &MultiLabelSample,
    mode: AlphaMode,
) -> Result<JointLoss> {
    let gt = (mode == AlphaMode::TeacherForced).then_some(&sample.labels);
    let alphas = compute_alphas(graph, outputs, gt)?;
    let mut total = 0.0f64;
    let mut per_task = BTreeMap::new();
    for (t, probs) in outputs {
        let y = sample.labels.get(t).ok_or(Error::UnknownTask(*t))?.class();
        let loss = cross_entropy(probs, y)?;
        let alpha = alphas[t];
        total += alpha * loss as f64;
        per_task.insert(*t, TaskLoss { alpha, loss });
    }
    Ok(JointLoss { total, per_task })
}

/// Forward and backward pass of the joint loss for one sample.
///
/// Heads whose α is exactly zero are skipped, so their gradients are
/// bitwise zero.
pub fn joint_gradients(
    bundle: &ModelBundle,
    sample: &MultiLabelSample,
    mode: AlphaMode,
    freeze_feature_extractor: bool,
) -> Result<JointGradients> {
    let fe = bundle.feature_extractor();
    let (feature, fe_cache) = fe.forward(&sample.window, &mut ())?;
    let mut outputs = BTreeMap::new();
    let mut caches: BTreeMap<TaskId, HeadCache> = BTreeMap::new();
    for (&t, head) in bundle.heads() {
        let (probs, cache) = head.forward(&feature, &mut ())?;
        outputs.insert(t, probs);
        caches.insert(t, cache);
    }
    let loss = loss_from_outputs(bundle.graph(), &outputs, sample, mode)?;

    let mut d_feature = Tensor::zeros(feature.shape());
    let mut heads = BTreeMap::new();
    for (&t, head) in bundle.heads() {
        let alpha = loss.per_task[&t].alpha as f32;
        if alpha == 0.0 {
            heads.insert(t, head.params().iter().map(|p| Tensor::zeros(p.shape())).collect());
            continue;
        }
        let y = sample.labels[&t].class();
        let mut d_logits = softmax_cross_entropy_grad(&outputs[&t], y)?;
        for v in d_logits.data_mut() {
            *v *= alpha;
        }
        let NetworkGrads { params, d_input } = head.backward(&caches[&t], &d_logits)?;
        for (acc, g) in d_feature.data_mut().iter_mut().zip(d_input.data()) {
            *acc += g;
        }
        heads.insert(t, params);
    }

    let feature_extractor = if freeze_feature_extractor {
        None
    } else {
        Some(fe.backward(&fe_cache, &d_feature)?.params)
    };
    Ok(JointGradients {
        loss,
        feature_extractor,
        heads,
    })
}

pub(crate) fn apply_gradients(bundle: &mut ModelBundle, grads: &JointGradients, sgd: &mut SgdState) -> Result<()> {
    let (fe, heads, _) = bundle.parts_mut();
    let mut params = Vec::new();
    let mut flat: Vec<Tensor> = Vec::new();
    if let Some(fe_grads) = &grads.feature_extractor {
        params.extend(fe.named_params_mut());
        flat.extend(fe_grads.iter().cloned());
    }
    for (t, head) in heads.iter_mut() {
        params.extend(head.named_params_mut(&format!("head{}", t.0)));
        flat.extend(grads.heads[t].iter().cloned());
    }
    sgd_step(params, &flat, sgd)
}

/// Visiting order of every epoch: identity, or a shuffle drawn from `rng`.
pub(crate) fn epoch_order(n: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub alpha_mode: AlphaMode,
    pub shuffle: bool,
    /// Keep the extractor fixed and train the heads only.
    pub freeze_feature_extractor: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.01,
            seed: 0,
            alpha_mode: AlphaMode::Predicted,
            shuffle: true,
            freeze_feature_extractor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean joint loss over the epoch's samples.
    pub total_loss: f64,
    /// Mean unweighted loss of each task over the samples whose path includes it.
    pub task_losses: BTreeMap<TaskId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub holdout: Option<EvalReport>,
}

impl TrainReport {
    /// Aligned text table followed by one machine-readable `epoch` row per epoch.
    pub fn render(&self, graph: &TaskGraph) -> String {
        let tasks: Vec<TaskId> = graph.task_ids().collect();
        let mut s = format!("{:>6} {:>12}", "epoch", "loss");
        for t in &tasks {
            s.push_str(&format!(" {:>10}", format!("L{}", t.0)));
        }
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{:>6} {:>12.6}", e.epoch, e.total_loss));
            for t in &tasks {
                s.push_str(&format!(" {:>10.5}", e.task_losses.get(t).copied().unwrap_or(0.0)));
            }
            s.push('\n');
        }
        if let Some(h) = &self.holdout {
            s.push_str(&h.render());
        }
        for e in &self.epochs {
            s.push_str(&format!("epoch\t{}\t{:.9}", e.epoch, e.total_loss));
            for t in &tasks {
                s.push_str(&format!("\t{:.9}", e.task_losses.get(t).copied().unwrap_or(0.0)));
            }
            s.push('\n');
        }
        s
    }
}

/// Sample-at-a-time gradient descent on the joint loss.
///
/// `holdout`, when given, is evaluated with hierarchical inference after the
/// last epoch.
pub fn train_joint(
    bundle: &mut ModelBundle,
    dataset: &[MultiLabelSample],
    holdout: Option<&[LabeledWindow]>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("joint training set"));
    }
    bundle.graph().ensure_valid()?;
    let mut sgd = SgdState::new(config.learning_rate, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(dataset.len(), config.shuffle, &mut rng);
        let mut total = 0.0f64;
        let mut task_sum: BTreeMap<TaskId, (f64, usize)> = BTreeMap::new();
        for (pos, &i) in order.iter().enumerate() {
            let sample = &dataset[i];
            let diverged = |loss: f32| Error::Divergence {
                epoch,
                sample: pos,
                loss,
            };
            let grads = joint_gradients(bundle, sample, config.alpha_mode, config.freeze_feature_extractor)
                .map_err(|e| match e {
                    Error::NonFinite(_) => diverged(f32::NAN),
                    other => other,
                })?;
            if !grads.loss.total.is_finite() {
                return Err(diverged(grads.loss.total as f32));
            }
            total += grads.loss.total;
            for (t, tl) in &grads.loss.per_task {
                if sample.labels[t].on_path().is_some() {
                    let e = task_sum.entry(*t).or_default();
                    e.0 += tl.loss as f64;
                    e.1 += 1;
                }
            }
            apply_gradients(bundle, &grads, &mut sgd).map_err(|e| match e {
                Error::NonFinite(_) => diverged(grads.loss.total as f32),
                other => other,
            })?;
        }
        epochs.push(EpochStats {
            epoch,
            total_loss: total / dataset.len() as f64,
            task_losses: task_sum
                .into_iter()
                .map(|(t, (s, n))| (t, s / n as f64))
                .collect(),
        });
    }
    let holdout = holdout.map(|h| evaluate(bundle, h)).transpose()?;
    Ok(TrainReport { epochs, holdout })
}

/// Confusion matrix over the composite labels plus accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_predictions(labels: Vec<String>, pairs: &[(String, String)]) -> Result<Self> {
        let k = labels.len();
        let pos = |l: &str| {
            labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::UnknownLabel(l.to_string()))
        };
        let mut confusion = vec![vec![0usize; k]; k];
        for (truth, pred) in pairs {
            confusion[pos(truth)?][pos(pred)?] += 1;
        }
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let accuracy = if pairs.is_empty() {
            0.0
        } else {
            correct as f64 / pairs.len() as f64
        };
        let per_class_accuracy = (0..k)
            .map(|i| {
                let n: usize = confusion[i].iter().sum();
                (n > 0).then(|| confusion[i][i] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            labels,
            confusion,
            accuracy,
            per_class_accuracy,
        })
    }

    pub fn min_class_accuracy(&self) -> Option<f64> {
        self.per_class_accuracy
            .iter()
            .flatten()
            .copied()
            .reduce(f64::min)
    }

    pub fn render(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(4).max(6);
        let mut s = format!("{:>width$}", "true\\pred");
        for l in &self.labels {
            s.push_str(&format!(" {:>width$}", l));
        }
        s.push_str(&format!(" {:>8}\n", "acc"));
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!("{:>width$}", self.labels[i]));
            for c in row {
                s.push_str(&format!(" {:>width$}", c));
            }
            match self.per_class_accuracy[i] {
                Some(a) => s.push_str(&format!(" {:>8.4}\n", a)),
                None => s.push_str(&format!(" {:>8}\n", "-")),
            }
        }
        s.push_str(&format!("accuracy {:.4}\n", self.accuracy));
        s
    }
}

/// Hierarchical inference on every window, evaluated in parallel over a
/// read-only bundle.
pub fn evaluate(bundle: &ModelBundle, samples: &[LabeledWindow]) -> Result<EvalReport> {
    let pairs = samples
        .par_iter()
        .map(|s| Ok((s.label.clone(), infer_hierarchical(bundle, &s.window)?.final_label)))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(bundle.graph().composite_labels(), &pairs)
}
