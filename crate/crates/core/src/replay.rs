//! Replay-buffer sampling: attributed-PageRank importance scores with an
//! exact quadratic attribute term or its linear-time Taylor surrogate,
//! neighborhood-diversity scores, and the budgeted buffer update.
//!
//! The importance walk mixes two transitions: the topology chain `T`
//! (out-degree-normalized, dangling columns uniform) and the attribute
//! chain `Q` built from RBF similarities over a fully connected feature
//! graph. `Q`'s stationary distribution has the closed form
//! `r_i = sum_j s(i,j) / z`, so the `O(N^2)` term `Q·pi` in the combined
//! recurrence is replaced by `r`, and `r` itself is either computed exactly
//! (quadratic, the oracle path) or through a second-order expansion of the
//! RBF sum that needs one `O(N·K^2)` precomputation pass.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjacency::record_traversal;
use crate::graph::{Graph, TaskView};
use crate::{Error, Result};

/// Settings for the importance walk.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ImportanceConfig {
    /// Mixing weight between the topology and attribute transitions.
    pub damping_d: f64,
    /// RBF bandwidth; `None` picks a median-distance heuristic per dataset.
    pub rbf_gamma: Option<f64>,
    pub max_iterations: usize,
    /// L1 convergence threshold on successive iterates.
    pub tolerance: f64,
    /// Use the Taylor surrogate for the attribute term instead of the
    /// exact quadratic computation.
    pub use_taylor_surrogate: bool,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            damping_d: 0.85,
            rbf_gamma: None,
            max_iterations: 100,
            tolerance: 1e-10,
            use_taylor_surrogate: true,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.damping_d) {
            return Err(Error::InvalidParameter(format!(
                "damping_d must lie in [0,1], got {}",
                self.damping_d
            )));
        }
        if let Some(g) = self.rbf_gamma {
            if g.is_nan() || g <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "rbf_gamma must be positive, got {g}"
                )));
            }
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Precomputed quantities for the surrogate attribute score:
/// `w_i = exp(-gamma * |x_i|^2)`, `a = sum w_j`, `b = 2 gamma sum w_j x_j`,
/// and the `K x K` matrix `2 gamma^2 sum w_j x_j x_j^T`.
#[derive(Debug, Clone)]
pub struct TaylorSurrogate {
    pub point_weights: Vec<f64>,
    pub scalar_a: f64,
    pub vector_b: Array1<f64>,
    pub matrix_c: Array2<f64>,
}

/// Outcome of the importance power iteration.
#[derive(Debug, Clone)]
pub struct ImportanceRun {
    /// Nonnegative scores summing to 1.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub residual_l1: f64,
    pub converged: bool,
    /// Set when the surrogate degenerated to all zeros and a uniform
    /// attribute term was substituted.
    pub uniform_r_fallback: bool,
    pub resolved_gamma: f64,
}

/// Applies the topology transition `T` to a per-node vector, matrix-free:
/// column `j` spreads `1/deg(j)` to each out-neighbor, and dangling columns
/// spread uniformly over all nodes.
pub fn transition_matrix_apply(graph: &Graph, vector: &[f64]) -> Result<Vec<f64>> {
    let n = graph.num_nodes();
    if vector.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "vector has {} entries for {n} nodes",
            vector.len()
        )));
    }
    record_traversal();
    let mut out = vec![0.0; n];
    let mut dangling_mass = 0.0;
    for j in 0..n {
        let row = graph.neighbors(j);
        if row.is_empty() {
            dangling_mass += vector[j];
        } else {
            let share = vector[j] / row.len() as f64;
            for &i in row {
                out[i] += share;
            }
        }
    }
    if dangling_mass != 0.0 {
        let uniform = dangling_mass / n as f64;
        for y in &mut out {
            *y += uniform;
        }
    }
    Ok(out)
}

fn squared_distance(a: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    let (ri, rj) = (a.row(i), a.row(j));
    let mut acc = 0.0;
    for d in 0..a.ncols() {
        let diff = ri[d] - rj[d];
        acc += diff * diff;
    }
    acc
}

/// Applies the attribute transition `Q` (column-normalized RBF similarity
/// over the fully connected feature graph) to a vector. Quadratic in `N`;
/// this is the oracle the surrogate is checked against.
pub fn exact_attribute_transition_apply(
    features: &ArrayView2<f64>,
    rbf_gamma: f64,
    vector: &[f64],
) -> Result<Vec<f64>> {
    let n = features.nrows();
    if vector.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "vector has {} entries for {n} nodes",
            vector.len()
        )));
    }
    // column sums (= unnormalized r by symmetry of s)
    let mut col_sums = vec![0.0; n];
    for j in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            acc += (-rbf_gamma * squared_distance(features, k, j)).exp();
        }
        col_sums[j] = acc;
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            let s = (-rbf_gamma * squared_distance(features, i, j)).exp();
            acc += s * vector[j] / col_sums[j];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Exact attribute stationary distribution `r_i = sum_j s(i,j) / z`.
pub fn exact_r(features: &ArrayView2<f64>, rbf_gamma: f64) -> Vec<f64> {
    let n = features.nrows();
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += (-rbf_gamma * squared_distance(features, i, j)).exp();
        }
        r[i] = acc;
    }
    let z: f64 = r.iter().sum();
    if z > 0.0 {
        for v in &mut r {
            *v /= z;
        }
    } else {
        let uniform = 1.0 / n as f64;
        r.fill(uniform);
    }
    r
}

/// One-pass precomputation of the surrogate terms; `O(N * K^2)`.
pub fn build_taylor_surrogate(
    features: &ArrayView2<f64>,
    rbf_gamma: f64,
) -> Result<TaylorSurrogate> {
    if rbf_gamma.is_nan() || rbf_gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rbf_gamma must be positive, got {rbf_gamma}"
        )));
    }
    let n = features.nrows();
    let k = features.ncols();
    let mut point_weights = vec![0.0; n];
    let mut scalar_a = 0.0;
    let mut vector_b = Array1::<f64>::zeros(k);
    let mut matrix_c = Array2::<f64>::zeros((k, k));
    for j in 0..n {
        let xj = features.row(j);
        let norm_sq: f64 = xj.iter().map(|v| v * v).sum();
        let w = (-rbf_gamma * norm_sq).exp();
        point_weights[j] = w;
        scalar_a += w;
        for d in 0..k {
            vector_b[d] += 2.0 * rbf_gamma * w * xj[d];
            for e in 0..k {
                matrix_c[[d, e]] += 2.0 * rbf_gamma * rbf_gamma * w * xj[d] * xj[e];
            }
        }
    }
    Ok(TaylorSurrogate {
        point_weights,
        scalar_a,
        vector_b,
        matrix_c,
    })
}

/// Surrogate scores `r̂_i = w_i (a + x_i·b + x_iᵀ C x_i)`, clamped at zero
/// (the truncation can produce tiny negatives) and normalized to sum 1.
/// Returns the vector plus a flag marking the all-zero degenerate case,
/// where a uniform distribution is substituted.
pub fn surrogate_r_detailed(
    surrogate: &TaylorSurrogate,
    features: &ArrayView2<f64>,
) -> (Vec<f64>, bool) {
    let n = features.nrows();
    let k = features.ncols();
    let mut r = vec![0.0; n];
    for i in 0..n {
        let xi = features.row(i);
        let mut quad = 0.0;
        let mut lin = 0.0;
        for d in 0..k {
            lin += xi[d] * surrogate.vector_b[d];
            let mut row_acc = 0.0;
            for e in 0..k {
                row_acc += surrogate.matrix_c[[d, e]] * xi[e];
            }
            quad += xi[d] * row_acc;
        }
        let raw = surrogate.point_weights[i] * (surrogate.scalar_a + lin + quad);
        r[i] = raw.max(0.0);
    }
    let z: f64 = r.iter().sum();
    if z > 0.0 {
        for v in &mut r {
            *v /= z;
        }
        (r, false)
    } else {
        let uniform = 1.0 / n as f64;
        r.fill(uniform);
        (r, true)
    }
}

/// Like [`surrogate_r_detailed`] but without the fallback flag.
pub fn surrogate_r(surrogate: &TaylorSurrogate, features: &ArrayView2<f64>) -> Vec<f64> {
    surrogate_r_detailed(surrogate, features).0
}

/// Median-pairwise-distance bandwidth heuristic: `1 / (2 m^2)` where `m` is
/// the median distance over a uniform sample of at most 256 nodes. The
/// sample seed is a fixed constant so the value depends only on the data.
pub fn default_gamma(features: &ArrayView2<f64>) -> f64 {
    const SAMPLE_SEED: u64 = 0x5eed_6a3a;
    const SAMPLE_CAP: usize = 256;
    let n = features.nrows();
    if n < 2 {
        return 1.0;
    }
    let ids: Vec<usize> = if n <= SAMPLE_CAP {
        (0..n).collect()
    } else {
        let mut pool: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        // partial Fisher-Yates: the first SAMPLE_CAP entries are the sample
        for i in 0..SAMPLE_CAP {
            let j = i + (rand::RngCore::next_u64(&mut rng) % (n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(SAMPLE_CAP);
        pool
    };
    let mut dists = Vec::with_capacity(ids.len() * (ids.len() - 1) / 2);
    for (a, &i) in ids.iter().enumerate() {
        for &j in ids.iter().skip(a + 1) {
            dists.push(squared_distance(features, i, j).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists[dists.len() / 2];
    if m > 0.0 {
        1.0 / (2.0 * m * m)
    } else {
        1.0
    }
}

/// Power iteration `pi <- d T pi + (1-d) r` from a uniform start.
///
/// `r` comes from the Taylor surrogate or the exact quadratic path per the
/// config. Non-convergence is not an error: the last iterate is returned
/// with `converged == false`.
pub fn importance_scores(
    graph: &Graph,
    features: &ArrayView2<f64>,
    config: &ImportanceConfig,
) -> Result<ImportanceRun> {
    config.validate()?;
    let n = graph.num_nodes();
    if features.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "feature matrix has {} rows for {n} nodes",
            features.nrows()
        )));
    }
    if n == 0 {
        return Ok(ImportanceRun {
            scores: Vec::new(),
            iterations: 0,
            residual_l1: 0.0,
            converged: true,
            uniform_r_fallback: false,
            resolved_gamma: config.rbf_gamma.unwrap_or(1.0),
        });
    }
    let gamma = config.rbf_gamma.unwrap_or_else(|| default_gamma(features));
    let (r, uniform_r_fallback) = if config.use_taylor_surrogate {
        let surrogate = build_taylor_surrogate(features, gamma)?;
        surrogate_r_detailed(&surrogate, features)
    } else {
        (exact_r(features, gamma), false)
    };

    let d = config.damping_d;
    if d == 0.0 {
        // the recurrence is constant at r
        return Ok(ImportanceRun {
            scores: r,
            iterations: 1,
            residual_l1: 0.0,
            converged: true,
            uniform_r_fallback,
            resolved_gamma: gamma,
        });
    }

    let mut pi = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut residual_l1 = f64::INFINITY;
    let mut converged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        let t_pi = transition_matrix_apply(graph, &pi)?;
        let mut next = vec![0.0; n];
        let mut diff = 0.0;
        for i in 0..n {
            next[i] = d * t_pi[i] + (1.0 - d) * r[i];
            diff += (next[i] - pi[i]).abs();
        }
        pi = next;
        residual_l1 = diff;
        if diff < config.tolerance {
            converged = true;
            break;
        }
    }
    // kill accumulated drift so the scores sum to exactly 1
    let total: f64 = pi.iter().sum();
    if total > 0.0 {
        for v in &mut pi {
            *v /= total;
        }
    }
    Ok(ImportanceRun {
        scores: pi,
        iterations,
        residual_l1,
        converged,
        uniform_r_fallback,
        resolved_gamma: gamma,
    })
}

/// Distance of each node's feature vector from its 1-hop neighbor mean;
/// isolated nodes score their own norm (empty mean treated as zero).
pub fn diversity_scores(graph: &Graph, features: &ArrayView2<f64>) -> Vec<f64> {
    record_traversal();
    let n = graph.num_nodes();
    let k = features.ncols();
    let mut scores = vec![0.0; n];
    let mut mean = vec![0.0; k];
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        mean.fill(0.0);
        if !nbrs.is_empty() {
            for &u in nbrs {
                let row = features.row(u);
                for d in 0..k {
                    mean[d] += row[d];
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            for v in &mut mean {
                *v *= inv;
            }
        }
        let xi = features.row(i);
        let mut acc = 0.0;
        for d in 0..k {
            let diff = xi[d] - mean[d];
            acc += diff * diff;
        }
        scores[i] = acc.sqrt();
    }
    scores
}

/// One replayed node: a feature-row copy, its label and provenance. The
/// buffer never stores graph structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub features: Vec<f64>,
    pub label: usize,
    pub origin_task: usize,
    pub origin_node: usize,
}

/// Which nodes an update selected, by ranking family.
#[derive(Debug, Clone, Default)]
pub struct SelectionSummary {
    pub diversity_picks: Vec<usize>,
    pub importance_picks: Vec<usize>,
}

impl SelectionSummary {
    pub fn total(&self) -> usize {
        self.diversity_picks.len() + self.importance_picks.len()
    }
}

/// Replay memory across tasks.
#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    pub records: Vec<MemoryRecord>,
    pub budget_per_task: usize,
    pub diversity_ratio: f64,
}

impl MemoryBuffer {
    pub fn new(budget_per_task: usize, diversity_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&diversity_ratio) {
            return Err(Error::InvalidParameter(format!(
                "diversity_ratio must lie in [0,1], got {diversity_ratio}"
            )));
        }
        Ok(MemoryBuffer {
            records: Vec::new(),
            budget_per_task,
            diversity_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Selects `ceil(ratio * budget)` training nodes by top diversity and
    /// fills the rest of the budget from the importance ranking, skipping
    /// nodes the diversity pass already took (so overlap is backfilled from
    /// the importance order). Ties break toward the smaller node id. Scores
    /// are indexed by `graph` node id and must cover the task's training
    /// nodes; test nodes are never eligible. A budget beyond the training
    /// size simply takes every training node.
    pub fn update(
        &mut self,
        graph: &Graph,
        task: &TaskView,
        importance: &[f64],
        diversity: &[f64],
    ) -> SelectionSummary {
        let budget = self.budget_per_task;
        let mut summary = SelectionSummary::default();
        if budget == 0 || task.train_ids.is_empty() {
            return summary;
        }
        let existing: std::collections::HashSet<usize> = self
            .records
            .iter()
            .filter(|r| r.origin_task == task.task_id)
            .map(|r| r.origin_node)
            .collect();
        let pool: Vec<usize> = task
            .train_ids
            .iter()
            .copied()
            .filter(|v| !existing.contains(v))
            .collect();
        let take = budget.min(pool.len());
        let n_div = (((self.diversity_ratio * budget as f64).ceil() as usize).min(budget)).min(take);

        let ranked = |scores: &[f64]| -> Vec<usize> {
            let mut ids = pool.clone();
            ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            ids
        };
        let div_ranked = ranked(diversity);
        let imp_ranked = ranked(importance);

        let mut chosen = std::collections::HashSet::new();
        for &v in div_ranked.iter().take(n_div) {
            chosen.insert(v);
            summary.diversity_picks.push(v);
        }
        for &v in &imp_ranked {
            if summary.diversity_picks.len() + summary.importance_picks.len() >= take {
                break;
            }
            if chosen.insert(v) {
                summary.importance_picks.push(v);
            }
        }

        let mut selected: Vec<usize> = chosen.into_iter().collect();
        selected.sort_unstable();
        for v in selected {
            self.records.push(MemoryRecord {
                features: graph.features.row(v).to_vec(),
                label: graph.labels[v],
                origin_task: task.task_id,
                origin_node: v,
            });
        }
        summary
    }

    /// Records grouped by origin task, in task order.
    pub fn grouped_by_task(&self) -> Vec<(usize, Vec<&MemoryRecord>)> {
        let mut groups: std::collections::BTreeMap<usize, Vec<&MemoryRecord>> =
            std::collections::BTreeMap::new();
        for r in &self.records {
            groups.entry(r.origin_task).or_default().push(r);
        }
        groups.into_iter().collect()
    }
}

/// Debug CSV for one task's sampling round: `node_id,importance,diversity,selected`.
pub fn selection_csv(
    task: &TaskView,
    importance: &[f64],
    diversity: &[f64],
    summary: &SelectionSummary,
) -> String {
    let selected: std::collections::HashSet<usize> = summary
        .diversity_picks
        .iter()
        .chain(summary.importance_picks.iter())
        .copied()
        .collect();
    let mut out = String::from("node_id,importance,diversity,selected\n");
    for &v in &task.train_ids {
        out.push_str(&format!(
            "{},{},{},{}\n",
            v,
            importance[v],
            diversity[v],
            u8::from(selected.contains(&v))
        ));
    }
    out
}
