//! Attributed graphs in CSR form, task partitions, and induced subgraphs.
//!
//! Node ids are dense 0-based integers. Undirected edges are stored in both
//! directions so every sparse kernel can treat the CSR rows uniformly;
//! directed graphs store out-edges. Rows are kept sorted and duplicate arcs
//! are rejected, which makes the symmetry check cheap and the layout
//! deterministic.

use ndarray::Array2;

use crate::{Error, Result};

/// CSR attributed graph with per-node labels and task ids.
///
/// Structure (offsets/indices) is immutable after construction; `features`,
/// `labels` and `node_task` are plain arrays owned by the graph.
#[derive(Debug, Clone)]
pub struct Graph {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    directed: bool,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub node_task: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an edge list. Undirected edges are listed once
    /// and stored in both directions.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        directed: bool,
        features: Array2<f64>,
        labels: Vec<usize>,
        node_task: Vec<usize>,
    ) -> Result<Self> {
        let mut deg = vec![0usize; num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Validation(format!(
                    "edge ({u},{v}) out of range for {num_nodes} nodes"
                )));
            }
            deg[u] += 1;
            if !directed {
                deg[v] += 1;
            }
        }
        let mut row_offsets = vec![0usize; num_nodes + 1];
        for i in 0..num_nodes {
            row_offsets[i + 1] = row_offsets[i] + deg[i];
        }
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0usize; row_offsets[num_nodes]];
        for &(u, v) in edges {
            col_indices[cursor[u]] = v;
            cursor[u] += 1;
            if !directed {
                col_indices[cursor[v]] = u;
                cursor[v] += 1;
            }
        }
        for i in 0..num_nodes {
            col_indices[row_offsets[i]..row_offsets[i + 1]].sort_unstable();
        }
        Self::from_csr(row_offsets, col_indices, directed, features, labels, node_task)
    }

    /// Builds a graph from raw CSR arrays. Rows must be sorted ascending.
    pub fn from_csr(
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        directed: bool,
        features: Array2<f64>,
        labels: Vec<usize>,
        node_task: Vec<usize>,
    ) -> Result<Self> {
        let g = Graph {
            row_offsets,
            col_indices,
            directed,
            features,
            labels,
            node_task,
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks every structural invariant; run by the constructors.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.is_empty() || self.row_offsets[0] != 0 {
            return Err(Error::Validation("row offsets must start at 0".into()));
        }
        let n = self.num_nodes();
        if *self.row_offsets.last().unwrap() != self.col_indices.len() {
            return Err(Error::Validation(format!(
                "last row offset {} != number of stored arcs {}",
                self.row_offsets.last().unwrap(),
                self.col_indices.len()
            )));
        }
        for i in 0..n {
            if self.row_offsets[i] > self.row_offsets[i + 1] {
                return Err(Error::Validation(format!("row offsets decrease at node {i}")));
            }
            let row = &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]];
            for (k, &j) in row.iter().enumerate() {
                if j >= n {
                    return Err(Error::Validation(format!(
                        "column index {j} out of range in row {i}"
                    )));
                }
                if j == i {
                    return Err(Error::Validation(format!("self-loop stored at node {i}")));
                }
                if k > 0 && row[k - 1] >= j {
                    return Err(Error::Validation(format!(
                        "row {i} not sorted or contains a duplicate arc to {j}"
                    )));
                }
            }
        }
        if self.features.nrows() != n {
            return Err(Error::Validation(format!(
                "feature matrix has {} rows for {n} nodes",
                self.features.nrows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Validation(format!(
                "label array has {} entries for {n} nodes",
                self.labels.len()
            )));
        }
        if self.node_task.len() != n {
            return Err(Error::Validation(format!(
                "task array has {} entries for {n} nodes",
                self.node_task.len()
            )));
        }
        if !self.directed {
            for u in 0..n {
                for &v in self.neighbors(u) {
                    if self.neighbors(v).binary_search(&u).is_err() {
                        return Err(Error::Validation(format!(
                            "undirected graph stores arc ({u},{v}) without its reverse"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Total class count implied by the labels (`max + 1`); 0 for an empty graph.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Out-neighbors of `u`, sorted ascending.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    /// Out-degree of `u`.
    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }

    /// Number of stored arcs (an undirected edge counts twice).
    pub fn stored_arc_count(&self) -> usize {
        self.col_indices.len()
    }

    /// Number of edges as a human would count them (undirected pairs once).
    pub fn edge_count(&self) -> usize {
        if self.directed {
            self.col_indices.len()
        } else {
            self.col_indices.len() / 2
        }
    }
}

/// One task's node set, its train/test split, and its class set.
#[derive(Debug, Clone)]
pub struct TaskView {
    pub task_id: usize,
    pub node_ids: Vec<usize>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub class_ids: Vec<usize>,
}

/// Ordered task views with disjoint class sets covering all nodes.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub tasks: Vec<TaskView>,
    pub classes_per_task: usize,
}

impl TaskSequence {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Sorted union of class ids of tasks `0..=t`.
    pub fn classes_through(&self, t: usize) -> Vec<usize> {
        let mut classes: Vec<usize> = self.tasks[..=t]
            .iter()
            .flat_map(|tv| tv.class_ids.iter().copied())
            .collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Checks the partition invariants against `graph`.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        let n = graph.num_nodes();
        let mut covered = vec![false; n];
        let mut class_owner: Vec<Option<usize>> = vec![None; graph.num_classes()];
        for (idx, tv) in self.tasks.iter().enumerate() {
            if tv.task_id != idx {
                return Err(Error::Validation(format!(
                    "task at position {idx} carries id {}",
                    tv.task_id
                )));
            }
            for &c in &tv.class_ids {
                match class_owner.get(c) {
                    Some(None) => class_owner[c] = Some(idx),
                    Some(Some(owner)) => {
                        return Err(Error::Validation(format!(
                            "class overlap: class {c} appears in task {owner} and task {idx}"
                        )))
                    }
                    None => {
                        return Err(Error::Validation(format!(
                            "task {idx} lists unknown class {c}"
                        )))
                    }
                }
            }
            for &v in &tv.node_ids {
                if v >= n {
                    return Err(Error::Validation(format!(
                        "task {idx} lists node {v} out of range"
                    )));
                }
                if covered[v] {
                    return Err(Error::Validation(format!(
                        "node {v} appears in more than one task"
                    )));
                }
                covered[v] = true;
                if graph.node_task[v] != idx {
                    return Err(Error::Validation(format!(
                        "node {v} is tagged task {} but listed under task {idx}",
                        graph.node_task[v]
                    )));
                }
                if tv.class_ids.binary_search(&graph.labels[v]).is_err() {
                    return Err(Error::Validation(format!(
                        "node {v} has label {} outside task {idx}'s class set",
                        graph.labels[v]
                    )));
                }
            }
            let members: std::collections::HashSet<usize> = tv.node_ids.iter().copied().collect();
            let mut seen_split = std::collections::HashSet::new();
            for &v in tv.train_ids.iter().chain(tv.test_ids.iter()) {
                if !members.contains(&v) {
                    return Err(Error::Validation(format!(
                        "split node {v} is not a member of task {idx}"
                    )));
                }
                if !seen_split.insert(v) {
                    return Err(Error::Validation(format!(
                        "node {v} appears in both train and test of task {idx}"
                    )));
                }
            }
        }
        if let Some(v) = covered.iter().position(|&c| !c) {
            return Err(Error::Validation(format!("node {v} belongs to no task")));
        }
        Ok(())
    }
}

/// Induced subgraph plus the recoverable id mapping.
///
/// `orig_ids[local] = original id`; the array is sorted ascending, so the
/// reverse lookup is a binary search.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    pub orig_ids: Vec<usize>,
}

impl Subgraph {
    /// Local index of an original node id, if the node is present.
    pub fn local(&self, orig: usize) -> Option<usize> {
        self.orig_ids.binary_search(&orig).ok()
    }

    /// Local indices for a batch of original ids; errors on absent ids.
    pub fn locals(&self, origs: &[usize]) -> Result<Vec<usize>> {
        origs
            .iter()
            .map(|&o| {
                self.local(o).ok_or_else(|| {
                    Error::Validation(format!("node {o} is not part of this subgraph"))
                })
            })
            .collect()
    }
}

/// Induced subgraph for task `t`.
///
/// With `include_prior_edges` the node set is task `t` plus the
/// earlier-task nodes its nodes are adjacent to, so inter-task edges back
/// to history contribute at inference; prior nodes with no edge into the
/// task add nothing and are left out. Without the flag the node set is
/// task `t` alone and no edge may leave the task. Future tasks are never
/// included either way.
pub fn task_subgraph(
    graph: &Graph,
    tasks: &TaskSequence,
    t: usize,
    include_prior_edges: bool,
) -> Result<Subgraph> {
    if t >= tasks.num_tasks() {
        return Err(Error::InvalidParameter(format!(
            "task id {t} out of range ({} tasks)",
            tasks.num_tasks()
        )));
    }
    let mut nodes = tasks.tasks[t].node_ids.clone();
    if include_prior_edges {
        for &v in &tasks.tasks[t].node_ids {
            for &u in graph.neighbors(v) {
                if graph.node_task[u] < t {
                    nodes.push(u);
                }
            }
        }
    }
    induced_subgraph(graph, &nodes)
}

/// Induced subgraph on an arbitrary node set (deduplicated, sorted).
pub fn induced_subgraph(graph: &Graph, node_set: &[usize]) -> Result<Subgraph> {
    let mut nodes: Vec<usize> = node_set.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if let Some(&v) = nodes.iter().find(|&&v| v >= graph.num_nodes()) {
        return Err(Error::InvalidParameter(format!(
            "node {v} out of range for {} nodes",
            graph.num_nodes()
        )));
    }

    let mut local = vec![usize::MAX; graph.num_nodes()];
    for (li, &oi) in nodes.iter().enumerate() {
        local[oi] = li;
    }

    let mut row_offsets = Vec::with_capacity(nodes.len() + 1);
    row_offsets.push(0usize);
    let mut col_indices = Vec::new();
    for &oi in &nodes {
        for &oj in graph.neighbors(oi) {
            if local[oj] != usize::MAX {
                col_indices.push(local[oj]);
            }
        }
        row_offsets.push(col_indices.len());
    }

    let features = graph.features.select(ndarray::Axis(0), &nodes);
    let labels: Vec<usize> = nodes.iter().map(|&o| graph.labels[o]).collect();
    let node_task: Vec<usize> = nodes.iter().map(|&o| graph.node_task[o]).collect();

    let sub = Graph::from_csr(
        row_offsets,
        col_indices,
        graph.is_directed(),
        features,
        labels,
        node_task,
    )?;
    Ok(Subgraph {
        graph: sub,
        orig_ids: nodes,
    })
}
