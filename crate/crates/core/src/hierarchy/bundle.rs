use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{TaskGraph, TaskId};
use crate::error::{Error, Result};
use crate::tensor_nn::{FeatureExtractor, FeatureExtractorSpec, Head, HeadSpec, Instrument, Tensor};

/// Shared feature extractor plus one head per task of `graph`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    fe: FeatureExtractor,
    heads: BTreeMap<TaskId, Head>,
    graph: TaskGraph,
}

impl ModelBundle {
    pub fn new(fe: FeatureExtractor, heads: BTreeMap<TaskId, Head>, graph: TaskGraph) -> Result<Self> {
        graph.ensure_valid()?;
        let bundle = Self { fe, heads, graph };
        bundle.check_heads()?;
        Ok(bundle)
    }

    fn check_heads(&self) -> Result<()> {
        let tasks: Vec<TaskId> = self.graph.task_ids().collect();
        let keys: Vec<TaskId> = self.heads.keys().copied().collect();
        if tasks != keys {
            return Err(Error::Precondition(format!(
                "bundle heads {:?} do not match graph tasks {:?}",
                keys, tasks
            )));
        }
        for (id, head) in &self.heads {
            if head.input_dim() != self.fe.feature_dim() {
                return Err(Error::Shape {
                    context: "model bundle",
                    dimension: "head input width",
                    expected: self.fe.feature_dim(),
                    found: head.input_dim(),
                });
            }
            let k = self.graph.labels(*id)?.k();
            if head.num_classes() != k {
                return Err(Error::Shape {
                    context: "model bundle",
                    dimension: "head class count",
                    expected: k,
                    found: head.num_classes(),
                });
            }
        }
        Ok(())
    }

    /// Freshly initialised bundle. Every head gets `hidden_widths` followed by
    /// a softmax layer of its task's label count. The extractor draws from the
    /// seeded stream first, then heads in task order.
    pub fn init(
        graph: TaskGraph,
        fe_spec: FeatureExtractorSpec,
        hidden_widths: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let specs = graph
            .task_ids()
            .map(|t| {
                let mut widths = hidden_widths.to_vec();
                widths.push(graph.labels(t)?.k());
                Ok((t, HeadSpec { layer_widths: widths }))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::init_with_specs(graph, fe_spec, specs, seed)
    }

    pub fn init_with_specs(
        graph: TaskGraph,
        fe_spec: FeatureExtractorSpec,
        head_specs: BTreeMap<TaskId, HeadSpec>,
        seed: u64,
    ) -> Result<Self> {
        graph.ensure_valid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fe = FeatureExtractor::init(fe_spec, &mut rng)?;
        let heads = head_specs
            .into_iter()
            .map(|(t, spec)| Ok((t, Head::init(spec, fe.feature_dim(), &mut rng)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::new(fe, heads, graph)
    }

    pub fn feature_extractor(&self) -> &FeatureExtractor {
        &self.fe
    }

    pub fn feature_extractor_mut(&mut self) -> &mut FeatureExtractor {
        &mut self.fe
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn heads(&self) -> &BTreeMap<TaskId, Head> {
        &self.heads
    }

    pub fn head(&self, task: TaskId) -> Result<&Head> {
        self.heads.get(&task).ok_or(Error::UnknownTask(task))
    }

    pub fn head_mut(&mut self, task: TaskId) -> Result<&mut Head> {
        self.heads.get_mut(&task).ok_or(Error::UnknownTask(task))
    }

    /// Split borrow used by joint training: the extractor and all heads at once.
    pub(crate) fn parts_mut(&mut self) -> (&mut FeatureExtractor, &mut BTreeMap<TaskId, Head>, &TaskGraph) {
        (&mut self.fe, &mut self.heads, &self.graph)
    }

    /// Replace the graph and head set together; used when tasks are added or removed.
    pub(crate) fn replace_tasks(&mut self, graph: TaskGraph, heads: BTreeMap<TaskId, Head>) -> Result<()> {
        graph.ensure_valid()?;
        let old_graph = std::mem::replace(&mut self.graph, graph);
        let old_heads = std::mem::replace(&mut self.heads, heads);
        if let Err(e) = self.check_heads() {
            self.graph = old_graph;
            self.heads = old_heads;
            return Err(e);
        }
        Ok(())
    }

    pub fn total_param_count(&self) -> usize {
        self.fe.weight_count()
            + self.fe.bias_count()
            + self
                .heads
                .values()
                .map(|h| h.weight_count() + h.bias_count())
                .sum::<usize>()
    }
}

/// One step of hierarchical inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub task: TaskId,
    pub label_index: usize,
    pub label: String,
    pub confidences: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    pub visited: Vec<TraceStep>,
    pub final_label: String,
}

/// Hierarchical prediction for one window: one extractor pass, then heads
/// from the root down until a terminal label is predicted.
pub fn infer_hierarchical(bundle: &ModelBundle, window: &Tensor) -> Result<InferenceTrace> {
    infer_hierarchical_with(bundle, window, &mut ())
}

pub fn infer_hierarchical_with<I: Instrument>(
    bundle: &ModelBundle,
    window: &Tensor,
    inst: &mut I,
) -> Result<InferenceTrace> {
    let (feature, _) = bundle.fe.forward(window, inst)?;
    infer_from_features(bundle, &feature, inst)
}

/// Hierarchical routing over an already extracted feature vector.
pub fn infer_from_features<I: Instrument>(
    bundle: &ModelBundle,
    feature: &Tensor,
    inst: &mut I,
) -> Result<InferenceTrace> {
    let graph = &bundle.graph;
    let mut task = graph.root_task()?;
    let mut visited = Vec::new();
    loop {
        let (probs, _) = bundle.head(task)?.forward(feature, inst)?;
        let label_index = probs.argmax();
        let label = graph.labels(task)?.labels[label_index].clone();
        visited.push(TraceStep {
            task,
            label_index,
            label: label.clone(),
            confidences: probs,
        });
        if graph.is_terminal(task, label_index) {
            return Ok(InferenceTrace {
                visited,
                final_label: label,
            });
        }
        let next = graph.triggered_by(task, &label);
        match next.first() {
            Some(&child) if visited.len() < graph.n() => task = child,
            _ => return Err(Error::SchemaIntegrity { task, label }),
        }
    }
}

/// Softmax output of every head from a single extractor pass.
pub fn forward_all_heads(bundle: &ModelBundle, window: &Tensor) -> Result<BTreeMap<TaskId, Tensor>> {
    let feature = bundle.fe.features(window)?;
    heads_on_feature(bundle, &feature)
}

pub fn heads_on_feature(bundle: &ModelBundle, feature: &Tensor) -> Result<BTreeMap<TaskId, Tensor>> {
    bundle
        .heads
        .iter()
        .map(|(&t, h)| Ok((t, h.predict(feature)?)))
        .collect()
}

/// Per-task training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskLabel {
    /// The task lies on the sample's root-to-terminal path.
    OnPath(usize),
    /// Off the path; `surrogate` is the class used if the task's loss is weighted in.
    OffPath { surrogate: usize },
}

impl TaskLabel {
    pub fn class(self) -> usize {
        match self {
            TaskLabel::OnPath(c) => c,
            TaskLabel::OffPath { surrogate } => surrogate,
        }
    }

    pub fn on_path(self) -> Option<usize> {
        match self {
            TaskLabel::OnPath(c) => Some(c),
            TaskLabel::OffPath { .. } => None,
        }
    }
}

/// Activation probability of each task: 1 at the root, otherwise
/// `Σ_j c(d_ij)·α_j` in topological order.
///
/// `c` is the parent's softmax score for the triggering label, or with
/// `ground_truth` the indicator that the parent's true label is that label.
pub fn compute_alphas(
    graph: &TaskGraph,
    head_outputs: &BTreeMap<TaskId, Tensor>,
    ground_truth: Option<&BTreeMap<TaskId, TaskLabel>>,
) -> Result<BTreeMap<TaskId, f64>> {
    graph.ensure_valid()?;
    let order = graph
        .topological_order()
        .expect("validated graphs are acyclic");
    let mut alphas: BTreeMap<TaskId, f64> = BTreeMap::new();
    for task in order {
        let parents = graph.parents(task);
        let alpha = if parents.is_empty() {
            1.0
        } else {
            let mut acc = 0.0f64;
            for (p, label) in parents {
                let idx = graph
                    .labels(p)?
                    .index_of(label)
                    .expect("validated dependency labels exist");
                let c = match ground_truth {
                    Some(gt) => match gt.get(&p) {
                        Some(TaskLabel::OnPath(y)) if *y == idx => 1.0,
                        _ => 0.0,
                    },
                    None => {
                        let probs = head_outputs.get(&p).ok_or(Error::UnknownTask(p))?;
                        if idx >= probs.len() {
                            return Err(Error::LabelOutOfRange {
                                index: idx,
                                classes: probs.len(),
                            });
                        }
                        probs.data()[idx] as f64
                    }
                };
                acc += c * alphas[&p];
            }
            acc
        };
        alphas.insert(task, alpha);
    }
    Ok(alphas)
}
