//! Adding a task to a trained bundle: decide where it attaches, extend the
//! schema, and train only the new head on top of the frozen extractor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{infer_hierarchical, ModelBundle, TaskGraph, TaskId};
use crate::tensor_nn::{
    cross_entropy, sgd_step, softmax_cross_entropy_grad, FeatureExtractor, Head, HeadSpec,
    SgdState, Tensor,
};
use crate::training::{epoch_order, LabeledWindow};

/// Windows collected for the new task, labelled with its class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquiredDataset {
    samples: Vec<(Tensor, usize)>,
    num_classes: usize,
}

impl AcquiredDataset {
    pub fn new(samples: Vec<(Tensor, usize)>, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset("acquired dataset"));
        }
        if let Some((_, y)) = samples.iter().find(|(_, y)| *y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index: *y,
                classes: num_classes,
            });
        }
        Ok(Self {
            samples,
            num_classes,
        })
    }

    /// Map each window's label to its position in `classes`.
    pub fn from_windows(windows: &[LabeledWindow], classes: &[String]) -> Result<Self> {
        let samples = windows
            .iter()
            .map(|w| {
                let y = classes
                    .iter()
                    .position(|c| *c == w.label)
                    .ok_or_else(|| Error::UnknownLabel(w.label.clone()))?;
                Ok((w.window.clone(), y))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, classes.len())
    }

    pub fn samples(&self) -> &[(Tensor, usize)] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Extracted features of every acquired window, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    rows: Vec<(Tensor, usize)>,
}

impl FeatureCache {
    /// One extractor pass per sample.
    pub fn build(fe: &FeatureExtractor, data: &AcquiredDataset) -> Result<Self> {
        let rows = data
            .samples
            .par_iter()
            .map(|(w, y)| Ok((fe.features(w)?, *y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(Tensor, usize)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// In-memory footprint of the cached feature values.
    pub fn size_bytes(&self) -> usize {
        self.rows.iter().map(|(f, _)| 4 * f.len()).sum()
    }
}

// ---- node selection ---------------------------------------------------------

/// Prediction frequencies of the existing hierarchy on the acquired data and
/// the resulting attachment point(s).
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementDecision {
    /// `(terminal label, count)` in composite-label order.
    pub counts: Vec<(String, usize)>,
    pub total: usize,
    /// Terminal labels by descending count; label order breaks ties.
    pub ranking: Vec<String>,
    pub f_prime: f64,
    pub f_second: f64,
    pub delta: Option<f64>,
    pub attach_to: Vec<String>,
}

impl PlacementDecision {
    /// Decision skeleton from externally supplied counts.
    pub fn from_counts(counts: Vec<(String, usize)>) -> Result<Self> {
        let total: usize = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(Error::EmptyDataset("placement counts"));
        }
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].1.cmp(&counts[a].1).then(a.cmp(&b)));
        let freq = |i: Option<&usize>| i.map_or(0.0, |&i| counts[i].1 as f64 / total as f64);
        Ok(Self {
            f_prime: freq(order.first()),
            f_second: freq(order.get(1)),
            ranking: order.iter().map(|&i| counts[i].0.clone()).collect(),
            counts,
            total,
            delta: None,
            attach_to: Vec::new(),
        })
    }

    pub fn frequency(&self, label: &str) -> Option<f64> {
        self.counts
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c as f64 / self.total as f64)
    }

    /// Fill `delta` and `attach_to`.
    pub fn decide(mut self, delta: f64) -> Result<Self> {
        self.attach_to = select_node(&self, delta)?;
        self.delta = Some(delta);
        Ok(self)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (l, c) in &self.counts {
            s.push_str(&format!("count {l} {c}\n"));
        }
        s.push_str(&format!(
            "f' = {}/{} = {:.6}\nf'' = {:.6}\n",
            self.counts
                .iter()
                .find(|(l, _)| Some(l) == self.ranking.first())
                .map_or(0, |(_, c)| *c),
            self.total,
            self.f_prime,
            self.f_second
        ));
        if let Some(d) = self.delta {
            s.push_str(&format!("delta = {d}\nattach: {}\n", self.attach_to.join(", ")));
        }
        s
    }
}

/// Hierarchical inference on every acquired window; counts are merged in
/// window order so the result does not depend on scheduling.
pub fn collect_placement_counts(bundle: &ModelBundle, data: &AcquiredDataset) -> Result<PlacementDecision> {
    let labels = bundle.graph().composite_labels();
    let predicted = data
        .samples
        .par_iter()
        .map(|(w, _)| Ok(infer_hierarchical(bundle, w)?.final_label))
        .collect::<Result<Vec<_>>>()?;
    let mut counts: Vec<(String, usize)> = labels.into_iter().map(|l| (l, 0)).collect();
    for p in predicted {
        let slot = counts
            .iter_mut()
            .find(|(l, _)| *l == p)
            .ok_or(Error::UnknownLabel(p))?;
        slot.1 += 1;
    }
    PlacementDecision::from_counts(counts)
}

/// The most predicted label alone when it leads the runner-up by more than
/// `delta`, otherwise both.
pub fn select_node(decision: &PlacementDecision, delta: f64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Precondition(format!("delta must lie in [0, 1], got {delta}")));
    }
    let r = &decision.ranking;
    if r.len() < 2 || decision.f_prime - decision.f_second > delta {
        Ok(r[..1].to_vec())
    } else {
        Ok(r[..2].to_vec())
    }
}

// ---- schema update ----------------------------------------------------------

/// New graph with a task activated by each terminal label in `attach_to`.
/// Those labels stop being terminal; the new task's labels become terminal.
pub fn attach_task(graph: &TaskGraph, name: &str, labels: &[String], attach_to: &[String]) -> Result<TaskGraph> {
    if attach_to.is_empty() || attach_to.len() > 2 {
        return Err(Error::Precondition(format!(
            "a task attaches to one or two labels, got {}",
            attach_to.len()
        )));
    }
    let terminals = graph.terminal_labels();
    let points = attach_to
        .iter()
        .map(|l| {
            terminals
                .iter()
                .find(|t| t.label == *l)
                .map(|t| (t.task, l.clone()))
                .ok_or_else(|| Error::Precondition(format!("`{l}` is not a terminal label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = graph.clone();
    g.push_task(name, labels.to_vec(), &points)?;
    g.ensure_valid()?;
    Ok(g)
}

/// Inverse of [`attach_task`]: drop the most recently added task.
pub fn detach_task(graph: &TaskGraph) -> Result<TaskGraph> {
    let mut g = graph.clone();
    g.pop_task()
        .ok_or_else(|| Error::Precondition("graph has no tasks".into()))?;
    g.ensure_valid()?;
    Ok(g)
}

/// Attach a task to the bundle with a freshly initialised head drawn from
/// `seed`. Existing parameters are untouched.
pub fn add_task(
    bundle: &mut ModelBundle,
    name: &str,
    labels: &[String],
    attach_to: &[String],
    head_spec: HeadSpec,
    seed: u64,
) -> Result<TaskId> {
    if head_spec.num_classes() != labels.len() {
        return Err(Error::Shape {
            context: "add task",
            dimension: "head class count",
            expected: labels.len(),
            found: head_spec.num_classes(),
        });
    }
    let graph = attach_task(bundle.graph(), name, labels, attach_to)?;
    let id = TaskId(graph.n());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = Head::init(head_spec, bundle.feature_extractor().feature_dim(), &mut rng)?;
    let mut heads = bundle.heads().clone();
    heads.insert(id, head);
    bundle.replace_tasks(graph, heads)?;
    Ok(id)
}

// ---- head training ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.01,
            seed: 0,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrainReport {
    pub task: TaskId,
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub cache_bytes: usize,
}

/// Gradient descent on `head` alone. `feature(i)` yields the feature vector
/// of sample `i`; the update sequence matches joint training of a one-task
/// bundle with a frozen extractor exactly.
pub fn train_head<F>(
    head: &mut Head,
    prefix: &str,
    n: usize,
    labels: impl Fn(usize) -> usize,
    mut feature: F,
    config: &HeadTrainConfig,
) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<Tensor>,
{
    if n == 0 {
        return Err(Error::EmptyDataset("head training set"));
    }
    let mut sgd = SgdState::new(config.learning_rate, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0f64;
        for (pos, i) in epoch_order(n, config.shuffle, &mut rng).into_iter().enumerate() {
            let diverged = |loss: f32| Error::Divergence {
                epoch,
                sample: pos,
                loss,
            };
            let f = feature(i)?;
            let y = labels(i);
            let (probs, cache) = head.forward(&f, &mut ())?;
            let loss = cross_entropy(&probs, y)?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            total += loss as f64;
            let d_logits = softmax_cross_entropy_grad(&probs, y)?;
            let grads = head.backward(&cache, &d_logits)?.params;
            sgd_step(head.named_params_mut(prefix), &grads, &mut sgd).map_err(|e| match e {
                Error::NonFinite(_) => diverged(loss),
                other => other,
            })?;
        }
        losses.push(total / n as f64);
    }
    Ok(losses)
}

fn check_task(bundle: &ModelBundle, task: TaskId, data: &AcquiredDataset) -> Result<()> {
    let k = bundle.head(task)?.num_classes();
    if k != data.num_classes {
        return Err(Error::Shape {
            context: "new head training",
            dimension: "class count",
            expected: k,
            found: data.num_classes,
        });
    }
    Ok(())
}

/// Train the head of `task` on cached features; the extractor is never written.
pub fn train_new_head(
    bundle: &mut ModelBundle,
    task: TaskId,
    data: &AcquiredDataset,
    config: &HeadTrainConfig,
) -> Result<HeadTrainReport> {
    check_task(bundle, task, data)?;
    let cache = FeatureCache::build(bundle.feature_extractor(), data)?;
    let rows = cache.rows();
    let head = bundle.head_mut(task)?;
    let epoch_losses = train_head(
        head,
        &format!("head{}", task.0),
        rows.len(),
        |i| rows[i].1,
        |i| Ok(rows[i].0.clone()),
        config,
    )?;
    Ok(HeadTrainReport {
        task,
        epoch_losses,
        cache_bytes: cache.size_bytes(),
    })
}

/// Same as [`train_new_head`] but recomputes every feature vector on demand.
pub fn train_new_head_uncached(
    bundle: &mut ModelBundle,
    task: TaskId,
    data: &AcquiredDataset,
    config: &HeadTrainConfig,
) -> Result<HeadTrainReport> {
    check_task(bundle, task, data)?;
    let mut head = bundle.head(task)?.clone();
    let fe = bundle.feature_extractor();
    let samples = data.samples();
    let epoch_losses = train_head(
        &mut head,
        &format!("head{}", task.0),
        samples.len(),
        |i| samples[i].1,
        |i| fe.features(&samples[i].0),
        config,
    )?;
    *bundle.head_mut(task)? = head;
    Ok(HeadTrainReport {
        task,
        epoch_losses,
        cache_bytes: 0,
    })
}

/// Accuracy of one head applied directly to the extracted features.
pub fn head_accuracy(bundle: &ModelBundle, task: TaskId, data: &AcquiredDataset) -> Result<f64> {
    let head = bundle.head(task)?;
    let fe = bundle.feature_extractor();
    let correct = data
        .samples
        .par_iter()
        .map(|(w, y)| Ok(usize::from(head.predict(&fe.features(w)?)?.argmax() == *y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / data.len() as f64)
}

// ---- memory -----------------------------------------------------------------

/// Weight count of a head: `Σ q_u · q_{u-1}` with `q_0 = feature_dim`.
/// Biases are not included.
pub fn head_weight_memory(spec: &HeadSpec, feature_dim: usize) -> Result<usize> {
    spec.validate()?;
    Ok(spec.layer_dims(feature_dim).iter().map(|(i, o)| i * o).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadBudget {
    pub m_w: usize,
    pub biases: usize,
    /// Bytes holding every head activation (input features included) for one
    /// backward pass.
    pub activation_bytes: usize,
    /// Feature cache for the whole acquired dataset.
    pub cache_bytes: usize,
}

impl HeadBudget {
    pub fn new(spec: &HeadSpec, feature_dim: usize, samples: usize) -> Result<Self> {
        let m_w = head_weight_memory(spec, feature_dim)?;
        Ok(Self {
            m_w,
            biases: spec.layer_widths.iter().sum(),
            activation_bytes: 4 * (feature_dim + spec.layer_widths.iter().sum::<usize>()),
            cache_bytes: 4 * feature_dim * samples,
        })
    }

    pub fn weight_bytes(&self) -> usize {
        4 * self.m_w
    }
}
