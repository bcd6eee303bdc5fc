use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};

/// 1-based task index; 0 is reserved for the composite task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub usize);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

/// Ordered label set of one task; a label's class index is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub task: TaskId,
    pub labels: Vec<String>,
}

impl LabelSet {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub name: String,
    pub labels: LabelSet,
}

/// `n × n` table; `get(i, j)` is the label of task `j` that activates task `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyMatrix {
    n: usize,
    entries: Vec<Option<String>>,
}

impl DependencyMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            entries: vec![None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, task: TaskId, parent: TaskId) -> Option<usize> {
        (task.0 >= 1 && task.0 <= self.n && parent.0 >= 1 && parent.0 <= self.n)
            .then(|| (task.0 - 1) * self.n + (parent.0 - 1))
    }

    pub fn get(&self, task: TaskId, parent: TaskId) -> Option<&str> {
        self.slot(task, parent)
            .and_then(|s| self.entries[s].as_deref())
    }

    pub fn set(&mut self, task: TaskId, parent: TaskId, label: Option<String>) -> Result<()> {
        let s = self.slot(task, parent).ok_or(Error::UnknownTask(task))?;
        self.entries[s] = label;
        Ok(())
    }

    /// Non-empty entries of `task`'s row as `(parent, label)`.
    pub fn row(&self, task: TaskId) -> Vec<(TaskId, &str)> {
        if task.0 == 0 || task.0 > self.n {
            return Vec::new();
        }
        (1..=self.n)
            .filter_map(|j| self.get(task, TaskId(j)).map(|l| (TaskId(j), l)))
            .collect()
    }

    fn grow(&self) -> Self {
        let n = self.n + 1;
        let mut entries = vec![None; n * n];
        for i in 0..self.n {
            for j in 0..self.n {
                entries[i * n + j] = self.entries[i * self.n + j].clone();
            }
        }
        Self { n, entries }
    }

    fn shrink(&self) -> Self {
        let n = self.n - 1;
        let mut entries = vec![None; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = self.entries[i * self.n + j].clone();
            }
        }
        Self { n, entries }
    }
}

/// One well-formedness problem, with the coordinates needed to locate it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TooFewLabels { task: TaskId, count: usize },
    DuplicateLabel { task: TaskId, label: String },
    MalformedLabel { task: TaskId, label: String },
    LabelNotInParent { task: TaskId, parent: TaskId, label: String },
    SelfDependency { task: TaskId },
    NoRoot,
    MultipleRoots { roots: Vec<TaskId> },
    Cycle { tasks: Vec<TaskId> },
    Unreachable { task: TaskId },
    SharedTrigger { parent: TaskId, label: String, tasks: Vec<TaskId> },
    MultipleParents { task: TaskId, count: usize },
    DuplicateTerminal { label: String, tasks: Vec<TaskId> },
}

fn ids(tasks: &[TaskId]) -> String {
    tasks.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewLabels { task, count } => {
                write!(f, "{task}: label set has {count} labels, need at least 2")
            }
            Violation::DuplicateLabel { task, label } => {
                write!(f, "{task}: duplicate label `{label}`")
            }
            Violation::MalformedLabel { task, label } => write!(
                f,
                "{task}: label `{label}` must be non-empty without whitespace, commas or `#`"
            ),
            Violation::LabelNotInParent { task, parent, label } => write!(
                f,
                "{task}: label not in parent label set: `{label}` is not a label of {parent}"
            ),
            Violation::SelfDependency { task } => write!(f, "{task}: depends on itself"),
            Violation::NoRoot => write!(f, "no root: every task has a dependency"),
            Violation::MultipleRoots { roots } => {
                write!(f, "multiple roots: {} have no dependency", ids(roots))
            }
            Violation::Cycle { tasks } => write!(f, "dependency cycle through {}", ids(tasks)),
            Violation::Unreachable { task } => write!(f, "{task}: not reachable from the root"),
            Violation::SharedTrigger {
                parent,
                label,
                tasks,
            } => write!(
                f,
                "{parent}/{label}: activates more than one task ({})",
                ids(tasks)
            ),
            Violation::MultipleParents { task, count } => write!(
                f,
                "{task}: has {count} parents; only a task attached on-device may have two"
            ),
            Violation::DuplicateTerminal { label, tasks } => write!(
                f,
                "terminal label `{label}` is produced by several tasks ({})",
                ids(tasks)
            ),
        }
    }
}

/// A terminal label of the hierarchy: one member of the composite label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminalLabel {
    pub task: TaskId,
    pub index: usize,
    pub label: String,
}

/// One root-to-terminal route: `(task, class index)` per step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPath {
    pub steps: Vec<(TaskId, usize)>,
}

impl TaskPath {
    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.steps.iter().map(|(t, _)| *t)
    }

    pub fn terminal(&self) -> (TaskId, usize) {
        *self.steps.last().expect("paths are never empty")
    }
}

/// Tasks, their label sets and the dependency matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    tasks: Vec<Task>,
    deps: DependencyMatrix,
    /// Tasks allowed to hang off two parent labels (on-device dual attachment).
    shared: BTreeSet<TaskId>,
}

impl TaskGraph {
    /// Graph with the given `(name, labels)` tasks as `T1..Tn` and no dependencies.
    pub fn new<S: Into<String>>(tasks: Vec<(S, Vec<S>)>) -> Self {
        let tasks: Vec<Task> = tasks
            .into_iter()
            .enumerate()
            .map(|(i, (name, labels))| Task {
                name: name.into(),
                labels: LabelSet {
                    task: TaskId(i + 1),
                    labels: labels.into_iter().map(Into::into).collect(),
                },
            })
            .collect();
        let n = tasks.len();
        Self {
            tasks,
            deps: DependencyMatrix::empty(n),
            shared: BTreeSet::new(),
        }
    }

    /// Record that `task` is activated when `parent` predicts `label`.
    pub fn depend(&mut self, task: TaskId, parent: TaskId, label: &str) -> Result<&mut Self> {
        self.deps.set(task, parent, Some(label.to_string()))?;
        Ok(self)
    }

    pub fn mark_shared(&mut self, task: TaskId) {
        self.shared.insert(task);
    }

    pub fn is_shared(&self, task: TaskId) -> bool {
        self.shared.contains(&task)
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> {
        (1..=self.tasks.len()).map(TaskId)
    }

    pub fn task(&self, id: TaskId) -> Result<&Task> {
        id.0.checked_sub(1)
            .and_then(|i| self.tasks.get(i))
            .ok_or(Error::UnknownTask(id))
    }

    pub fn labels(&self, id: TaskId) -> Result<&LabelSet> {
        self.task(id).map(|t| &t.labels)
    }

    pub fn dependencies(&self) -> &DependencyMatrix {
        &self.deps
    }

    pub fn parents(&self, task: TaskId) -> Vec<(TaskId, &str)> {
        self.deps.row(task)
    }

    /// Tasks activated when `parent` predicts `label`.
    pub fn triggered_by(&self, parent: TaskId, label: &str) -> Vec<TaskId> {
        self.task_ids()
            .filter(|&t| self.deps.get(t, parent) == Some(label))
            .collect()
    }

    /// Every problem with the graph; empty means well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n();
        for t in &self.tasks {
            let id = t.labels.task;
            if t.labels.k() < 2 {
                out.push(Violation::TooFewLabels {
                    task: id,
                    count: t.labels.k(),
                });
            }
            let mut seen = BTreeSet::new();
            for l in &t.labels.labels {
                if !is_token(l) {
                    out.push(Violation::MalformedLabel {
                        task: id,
                        label: l.clone(),
                    });
                }
                if !seen.insert(l.as_str()) {
                    out.push(Violation::DuplicateLabel {
                        task: id,
                        label: l.clone(),
                    });
                }
            }
        }

        for id in self.task_ids() {
            let parents = self.parents(id);
            for &(p, label) in &parents {
                if p == id {
                    out.push(Violation::SelfDependency { task: id });
                } else if self.tasks[p.0 - 1].labels.index_of(label).is_none() {
                    out.push(Violation::LabelNotInParent {
                        task: id,
                        parent: p,
                        label: label.to_string(),
                    });
                }
            }
            let allowed = if self.shared.contains(&id) { 2 } else { 1 };
            if parents.len() > allowed {
                out.push(Violation::MultipleParents {
                    task: id,
                    count: parents.len(),
                });
            }
        }

        let mut triggers: BTreeMap<(TaskId, &str), Vec<TaskId>> = BTreeMap::new();
        for id in self.task_ids() {
            for (p, label) in self.parents(id) {
                triggers.entry((p, label)).or_default().push(id);
            }
        }
        for ((parent, label), tasks) in &triggers {
            if tasks.len() > 1 {
                out.push(Violation::SharedTrigger {
                    parent: *parent,
                    label: label.to_string(),
                    tasks: tasks.clone(),
                });
            }
        }

        let roots = self.roots();
        match roots.len() {
            0 if n > 0 => out.push(Violation::NoRoot),
            0 | 1 => {}
            _ => out.push(Violation::MultipleRoots { roots: roots.clone() }),
        }

        if n > 0 {
            if let Err(cycle) = self.topological_order() {
                out.push(Violation::Cycle { tasks: cycle });
            }
            if roots.len() == 1 {
                let reach = self.reachable_from(roots[0]);
                for id in self.task_ids() {
                    if !reach.contains(&id) {
                        out.push(Violation::Unreachable { task: id });
                    }
                }
            }
        }

        let mut terminal_owners: BTreeMap<&str, Vec<TaskId>> = BTreeMap::new();
        for t in self.terminal_labels_unchecked() {
            terminal_owners
                .entry(self.tasks[t.task.0 - 1].labels.labels[t.index].as_str())
                .or_default()
                .push(t.task);
        }
        for (label, tasks) in terminal_owners {
            if tasks.len() > 1 {
                out.push(Violation::DuplicateTerminal {
                    label: label.to_string(),
                    tasks,
                });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(v))
        }
    }

    fn roots(&self) -> Vec<TaskId> {
        self.task_ids()
            .filter(|&t| self.deps.row(t).is_empty())
            .collect()
    }

    /// The unique task without dependencies.
    pub fn root_task(&self) -> Result<TaskId> {
        self.ensure_valid()?;
        Ok(self.roots()[0])
    }

    fn children(&self, parent: TaskId) -> Vec<TaskId> {
        self.task_ids()
            .filter(|&t| t != parent && self.deps.get(t, parent).is_some())
            .collect()
    }

    fn reachable_from(&self, root: TaskId) -> BTreeSet<TaskId> {
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(t) = queue.pop_front() {
            for c in self.children(t) {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        seen
    }

    /// Parents before children, ties broken by task index. On a cycle, returns
    /// the tasks that could not be ordered.
    pub fn topological_order(&self) -> std::result::Result<Vec<TaskId>, Vec<TaskId>> {
        let mut indegree: BTreeMap<TaskId, usize> = self
            .task_ids()
            .map(|t| {
                let d = self.deps.row(t).iter().filter(|(p, _)| *p != t).count()
                    + usize::from(self.deps.get(t, t).is_some());
                (t, d)
            })
            .collect();
        let mut ready: BTreeSet<TaskId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&t, _)| t)
            .collect();
        let mut order = Vec::with_capacity(self.n());
        while let Some(&t) = ready.iter().next() {
            ready.remove(&t);
            order.push(t);
            for c in self.children(t) {
                let d = indegree.get_mut(&c).expect("child is a task");
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == self.n() {
            Ok(order)
        } else {
            Err(indegree
                .into_iter()
                .filter(|(t, _)| !order.contains(t))
                .map(|(t, _)| t)
                .collect())
        }
    }

    fn terminal_labels_unchecked(&self) -> Vec<TerminalLabel> {
        let mut out = Vec::new();
        for t in &self.tasks {
            for (i, l) in t.labels.labels.iter().enumerate() {
                if self.triggered_by(t.labels.task, l).is_empty() {
                    out.push(TerminalLabel {
                        task: t.labels.task,
                        index: i,
                        label: l.clone(),
                    });
                }
            }
        }
        out
    }

    /// The composite label set, in task order then class order.
    pub fn terminal_labels(&self) -> Vec<TerminalLabel> {
        self.terminal_labels_unchecked()
    }

    pub fn composite_labels(&self) -> Vec<String> {
        self.terminal_labels_unchecked()
            .into_iter()
            .map(|t| t.label)
            .collect()
    }

    pub fn is_terminal(&self, task: TaskId, index: usize) -> bool {
        self.tasks
            .get(task.0.wrapping_sub(1))
            .and_then(|t| t.labels.labels.get(index))
            .is_some_and(|l| self.triggered_by(task, l).is_empty())
    }

    pub fn terminal_position(&self, label: &str) -> Option<usize> {
        self.composite_labels().iter().position(|l| l == label)
    }

    /// Every root-to-terminal route, depth-first in class order.
    pub fn paths(&self) -> Result<Vec<TaskPath>> {
        let root = self.root_task()?;
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.collect_paths(root, &mut stack, &mut out);
        Ok(out)
    }

    fn collect_paths(&self, task: TaskId, stack: &mut Vec<(TaskId, usize)>, out: &mut Vec<TaskPath>) {
        let labels = &self.tasks[task.0 - 1].labels.labels;
        for (i, l) in labels.iter().enumerate() {
            stack.push((task, i));
            let next = self.triggered_by(task, l);
            if next.is_empty() {
                out.push(TaskPath {
                    steps: stack.clone(),
                });
            } else {
                for c in next {
                    self.collect_paths(c, stack, out);
                }
            }
            stack.pop();
        }
    }

    /// Append a task activated by each `(parent, label)` in `attach`.
    /// Two attachment points mark the new task as shared.
    pub(crate) fn push_task(&mut self, name: &str, labels: Vec<String>, attach: &[(TaskId, String)]) -> Result<TaskId> {
        let id = TaskId(self.n() + 1);
        self.deps = self.deps.grow();
        self.tasks.push(Task {
            name: name.to_string(),
            labels: LabelSet { task: id, labels },
        });
        for (p, l) in attach {
            self.deps.set(id, *p, Some(l.clone()))?;
        }
        if attach.len() > 1 {
            self.shared.insert(id);
        }
        Ok(id)
    }

    /// Remove the highest-numbered task. Only that task can go without
    /// renumbering the rest.
    pub(crate) fn pop_task(&mut self) -> Option<Task> {
        let task = self.tasks.pop()?;
        self.shared.remove(&task.labels.task);
        self.deps = self.deps.shrink();
        Some(task)
    }

    // ---- schema text -------------------------------------------------------

    /// Canonical schema text. Parsing it gives back an equal graph.
    pub fn to_schema_text(&self) -> String {
        let mut s = String::from("dendron-schema 1\n");
        for t in &self.tasks {
            s.push_str(&format!("task {} {}", t.labels.task.0, t.name));
            for l in &t.labels.labels {
                s.push(' ');
                s.push_str(l);
            }
            s.push('\n');
        }
        for id in self.task_ids() {
            for (p, l) in self.parents(id) {
                s.push_str(&format!("dep {} {} {}\n", id.0, p.0, l));
            }
        }
        for id in &self.shared {
            s.push_str(&format!("shared {}\n", id.0));
        }
        s.push_str("terminal");
        for l in self.composite_labels() {
            s.push(' ');
            s.push_str(&l);
        }
        s.push('\n');
        s
    }

    /// Parse and validate schema text. Blank lines and `#` comments are ignored;
    /// the declared terminal labels must equal the derived composite label set.
    pub fn from_schema_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Data(format!("schema line {line}: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        match lines.next() {
            Some((_, "dendron-schema 1")) => {}
            Some((n, _)) => return Err(bad(n, "expected header `dendron-schema 1`")),
            None => return Err(Error::Data("schema is empty".into())),
        }

        let mut tasks: Vec<(String, Vec<String>)> = Vec::new();
        let mut deps = Vec::new();
        let mut shared = Vec::new();
        let mut terminal: Option<Vec<String>> = None;
        let parse_id = |n: usize, tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse::<usize>().ok())
                .filter(|&v| v >= 1)
                .ok_or_else(|| bad(n, "expected a task index >= 1"))
        };
        for (n, line) in lines {
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("task") => {
                    let id = parse_id(n, toks.next())?;
                    if id != tasks.len() + 1 {
                        return Err(bad(n, "tasks must be declared in order T1, T2, ..."));
                    }
                    let name = toks.next().ok_or_else(|| bad(n, "missing task name"))?;
                    tasks.push((name.to_string(), toks.map(String::from).collect()));
                }
                Some("dep") => {
                    let child = parse_id(n, toks.next())?;
                    let parent = parse_id(n, toks.next())?;
                    let label = toks.next().ok_or_else(|| bad(n, "missing parent label"))?;
                    if toks.next().is_some() {
                        return Err(bad(n, "trailing tokens after dependency"));
                    }
                    deps.push((n, child, parent, label.to_string()));
                }
                Some("shared") => shared.push((n, parse_id(n, toks.next())?)),
                Some("terminal") => {
                    if terminal.is_some() {
                        return Err(bad(n, "terminal labels declared twice"));
                    }
                    terminal = Some(toks.map(String::from).collect());
                }
                Some(other) => return Err(bad(n, &format!("unknown directive `{other}`"))),
                None => unreachable!("blank lines filtered"),
            }
        }

        let mut graph = TaskGraph::new(tasks);
        for (n, child, parent, label) in deps {
            if child > graph.n() || parent > graph.n() {
                return Err(bad(n, "dependency names an undeclared task"));
            }
            if graph.deps.get(TaskId(child), TaskId(parent)).is_some() {
                return Err(bad(n, "duplicate dependency entry"));
            }
            graph.depend(TaskId(child), TaskId(parent), &label)?;
        }
        for (n, id) in shared {
            if id > graph.n() {
                return Err(bad(n, "shared marker names an undeclared task"));
            }
            graph.mark_shared(TaskId(id));
        }
        graph.ensure_valid()?;

        let declared = terminal.ok_or_else(|| Error::Data("schema has no `terminal` line".into()))?;
        let derived = graph.composite_labels();
        let as_set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
        if declared.len() != derived.len() || as_set(&declared) != as_set(&derived) {
            return Err(Error::Data(format!(
                "declared terminal labels [{}] differ from the hierarchy's terminal labels [{}]",
                declared.join(" "),
                derived.join(" ")
            )));
        }
        Ok(graph)
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == ',' || c == '#')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::activity_schema;

    #[test]
    fn activity_schema_is_valid() {
        let g = activity_schema();
        assert_eq!(g.validate(), vec![]);
        assert_eq!(g.n(), 6);
        let d6: Vec<Option<&str>> = (1..=6)
            .map(|j| g.dependencies().get(TaskId(6), TaskId(j)))
            .collect();
        assert_eq!(d6, vec![None, None, None, None, Some("stairs"), None]);
    }

    #[test]
    fn activity_schema_root_and_terminals() {
        let g = activity_schema();
        let root = g.root_task().unwrap();
        assert_eq!(g.labels(root).unwrap().labels, vec!["static", "moving"]);
        assert_eq!(
            g.composite_labels(),
            vec!["lying", "sitting", "standing", "running", "walking", "upstairs", "downstairs"]
        );
    }

    #[test]
    fn two_roots_reported() {
        let mut g = activity_schema();
        g.deps.set(TaskId(2), TaskId(1), None).unwrap();
        let v = g.validate();
        assert!(v.iter().any(|v| matches!(v, Violation::MultipleRoots { .. })), "{v:?}");
        assert!(v.iter().any(|v| v.to_string().starts_with("multiple roots")));
    }

    #[test]
    fn foreign_label_reported() {
        let mut g = TaskGraph::new(vec![
            ("motion", vec!["moving", "static"]),
            ("gait", vec!["walk", "run"]),
        ]);
        g.depend(TaskId(2), TaskId(1), "flying").unwrap();
        let v = g.validate();
        assert!(v.contains(&Violation::LabelNotInParent {
            task: TaskId(2),
            parent: TaskId(1),
            label: "flying".into()
        }));
        assert!(v.iter().any(|v| v.to_string().contains("label not in parent label set")));
    }

    #[test]
    fn single_task_graph_root() {
        let g = TaskGraph::new(vec![("only", vec!["a", "b"])]);
        assert_eq!(g.root_task().unwrap(), TaskId(1));
        assert_eq!(g.composite_labels(), vec!["a", "b"]);
    }

    #[test]
    fn cycle_is_an_error_for_root_lookup() {
        let mut g = TaskGraph::new(vec![
            ("a", vec!["x", "y"]),
            ("b", vec!["u", "v"]),
            ("c", vec!["p", "q"]),
        ]);
        g.depend(TaskId(2), TaskId(3), "p").unwrap();
        g.depend(TaskId(3), TaskId(2), "u").unwrap();
        let v = g.validate();
        assert!(v.iter().any(|v| matches!(v, Violation::Cycle { .. })), "{v:?}");
        assert!(g.root_task().is_err());
    }

    #[test]
    fn shared_trigger_and_extra_parents_rejected() {
        let mut g = TaskGraph::new(vec![
            ("a", vec!["x", "y"]),
            ("b", vec!["u", "v"]),
            ("c", vec!["p", "q"]),
        ]);
        g.depend(TaskId(2), TaskId(1), "x").unwrap();
        g.depend(TaskId(3), TaskId(1), "x").unwrap();
        assert!(g
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::SharedTrigger { .. })));

        let mut g = TaskGraph::new(vec![
            ("a", vec!["x", "y"]),
            ("b", vec!["u", "v"]),
            ("c", vec!["p", "q"]),
        ]);
        g.depend(TaskId(2), TaskId(1), "x").unwrap();
        g.depend(TaskId(3), TaskId(1), "y").unwrap();
        g.depend(TaskId(3), TaskId(2), "u").unwrap();
        assert!(g
            .validate()
            .contains(&Violation::MultipleParents { task: TaskId(3), count: 2 }));
        g.mark_shared(TaskId(3));
        assert_eq!(g.validate(), vec![]);
    }

    #[test]
    fn duplicate_terminal_rejected() {
        let mut g = TaskGraph::new(vec![("a", vec!["x", "y"]), ("b", vec!["y", "z"])]);
        g.depend(TaskId(2), TaskId(1), "x").unwrap();
        assert!(g
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::DuplicateTerminal { label, .. } if label == "y")));
    }

    #[test]
    fn paths_enumerate_every_terminal_once() {
        let g = activity_schema();
        let paths = g.paths().unwrap();
        let terminals: Vec<String> = paths
            .iter()
            .map(|p| {
                let (t, i) = p.terminal();
                g.labels(t).unwrap().labels[i].clone()
            })
            .collect();
        let mut sorted = terminals.clone();
        sorted.sort();
        let mut want = g.composite_labels();
        want.sort();
        assert_eq!(sorted, want);
        let upstairs = &paths[terminals.iter().position(|l| l == "upstairs").unwrap()];
        assert_eq!(
            upstairs.tasks().collect::<Vec<_>>(),
            vec![TaskId(1), TaskId(4), TaskId(5), TaskId(6)]
        );
    }

    #[test]
    fn schema_text_round_trip() {
        let g = activity_schema();
        let text = g.to_schema_text();
        let back = TaskGraph::from_schema_text(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_schema_text(), text);
    }

    #[test]
    fn schema_text_rejects_wrong_terminals() {
        let text = activity_schema()
            .to_schema_text()
            .replace(" downstairs\n", "\n");
        assert!(TaskGraph::from_schema_text(&text).is_err());
    }

    #[test]
    fn schema_text_tolerates_comments() {
        let text = "# two levels\ndendron-schema 1\n\ntask 1 root a b  # trailing\ntask 2 sub c d\ndep 2 1 a\nterminal b c d\n";
        let g = TaskGraph::from_schema_text(text).unwrap();
        assert_eq!(g.composite_labels(), vec!["b", "c", "d"]);
    }
}
