//! Task hierarchy, the shared-extractor model bundle, and hierarchical inference.
//!
//! A hierarchy is a set of classification tasks `T1..Tn`, each with its own
//! label set, plus a dependency matrix saying which parent label activates
//! which task. Labels that activate nothing are terminal; together they form
//! the composite label set that hierarchical inference can return.

mod bundle;
mod graph;

pub use bundle::{
    compute_alphas, forward_all_heads, heads_on_feature, infer_from_features, infer_hierarchical,
    infer_hierarchical_with, InferenceTrace, ModelBundle, TaskLabel, TraceStep,
};
pub use graph::{
    DependencyMatrix, LabelSet, Task, TaskGraph, TaskId, TaskPath, TerminalLabel, Violation,
};

/// The six-task activity hierarchy: static/moving at the root, posture and
/// locomotion splits below it, and a stairs direction task at the bottom.
///
/// ```text
/// T1 {static, moving}
/// ├─ static  → T2 {lying, upright}
/// │            └─ upright → T3 {sitting, standing}
/// └─ moving  → T4 {walking_stairs, running}
///              └─ walking_stairs → T5 {walking, stairs}
///                                  └─ stairs → T6 {upstairs, downstairs}
/// ```
pub fn activity_schema() -> TaskGraph {
    let mut g = TaskGraph::new(vec![
        ("activity", vec!["static", "moving"]),
        ("posture", vec!["lying", "upright"]),
        ("upright", vec!["sitting", "standing"]),
        ("locomotion", vec!["walking_stairs", "running"]),
        ("gait", vec!["walking", "stairs"]),
        ("stairs", vec!["upstairs", "downstairs"]),
    ]);
    for (task, parent, label) in [
        (2, 1, "static"),
        (3, 2, "upright"),
        (4, 1, "moving"),
        (5, 4, "walking_stairs"),
        (6, 5, "stairs"),
    ] {
        g.depend(TaskId(task), TaskId(parent), label)
            .expect("indices are in range");
    }
    g
}
