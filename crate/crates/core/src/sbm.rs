//! Seeded stochastic-block-model generator.
//!
//! Each class is a block; tasks own consecutive disjoint class ranges.
//! Edges within a class appear with `p_intra`, between classes of the same
//! task with `p_inter`, and across tasks with `p_intertask`, which is what
//! lets later tasks attach to earlier ones. Features of class `c` are drawn
//! from an isotropic Gaussian whose mean is `feature_shift` scaled along a
//! coordinate cycling with `c`, so classes sharing a coordinate still differ
//! in magnitude.
//!
//! Everything (features, edges, splits) is drawn from one ChaCha stream in a
//! fixed order, so a seed pins the dataset exactly. Bernoulli draws compare
//! a raw `u64` against a precomputed threshold rather than going through a
//! float in the hot loop.

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{Graph, TaskSequence, TaskView};
use crate::{Error, Result};

/// Generator parameters. `Default` gives a small 3-task toy graph.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SbmParams {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub nodes_per_class: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub p_intertask: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub seed: u64,
    /// Per-class fraction of nodes assigned to the train split.
    pub train_fraction: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            num_tasks: 3,
            classes_per_task: 2,
            nodes_per_class: 100,
            p_intra: 0.05,
            p_inter: 0.01,
            p_intertask: 0.002,
            feature_dim: 16,
            feature_shift: 3.0,
            seed: 0,
            train_fraction: 0.6,
        }
    }
}

impl SbmParams {
    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("p_intertask", self.p_intertask),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0,1], got {p}"
                )));
            }
        }
        for (name, c) in [
            ("num_tasks", self.num_tasks),
            ("classes_per_task", self.classes_per_task),
            ("nodes_per_class", self.nodes_per_class),
            ("feature_dim", self.feature_dim),
        ] {
            if c < 1 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.train_fraction.is_nan() || self.train_fraction <= 0.0 || self.train_fraction >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn num_nodes(&self) -> usize {
        self.num_classes() * self.nodes_per_class
    }
}

/// Mean feature vector of class `c`.
///
/// Classes come in antipodal pairs: classes `2p` and `2p+1` sit at `±shift`
/// along coordinate `p % dim`, scaled up each time the coordinate wraps.
/// Each pair owns its own discriminative direction while every other
/// coordinate carries pure noise for it, so sequentially training on later
/// pairs drifts a low-capacity encoder away from earlier directions, which
/// is what makes forgetting observable at synthetic scale.
fn class_mean(c: usize, dim: usize, shift: f64) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let pair = c / 2;
    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
    let wrap_scale = 1.0 + (pair / dim) as f64;
    mean[pair % dim] = shift * sign * wrap_scale;
    mean
}

/// `u64` threshold such that `next_u64() < threshold` fires with probability `p`.
fn bernoulli_threshold(p: f64) -> Option<u64> {
    if p <= 0.0 {
        None
    } else if p >= 1.0 {
        Some(u64::MAX)
    } else {
        Some((p * (u64::MAX as f64 + 1.0)) as u64)
    }
}

/// Generates an undirected SBM graph plus its task sequence; deterministic
/// per seed.
pub fn generate_sbm(params: &SbmParams) -> Result<(Graph, TaskSequence)> {
    params.validate()?;
    let num_classes = params.num_classes();
    let npc = params.nodes_per_class;
    let n = params.num_nodes();
    let dim = params.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let labels: Vec<usize> = (0..n).map(|v| v / npc).collect();
    let node_task: Vec<usize> = labels.iter().map(|&c| c / params.classes_per_task).collect();

    let mut features = Array2::<f64>::zeros((n, dim));
    for c in 0..num_classes {
        let mean = class_mean(c, dim, params.feature_shift);
        for v in c * npc..(c + 1) * npc {
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[v, d]] = mean[d] + z;
            }
        }
    }

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for ca in 0..num_classes {
        for cb in ca..num_classes {
            let p = if ca == cb {
                params.p_intra
            } else if node_task[ca * npc] == node_task[cb * npc] {
                params.p_inter
            } else {
                params.p_intertask
            };
            let Some(threshold) = bernoulli_threshold(p) else {
                continue;
            };
            if ca == cb {
                for u in ca * npc..(ca + 1) * npc {
                    for v in u + 1..(ca + 1) * npc {
                        if rng.next_u64() < threshold {
                            edges.push((u, v));
                        }
                    }
                }
            } else {
                for u in ca * npc..(ca + 1) * npc {
                    for v in cb * npc..(cb + 1) * npc {
                        if rng.next_u64() < threshold {
                            edges.push((u, v));
                        }
                    }
                }
            }
        }
    }

    let graph = Graph::from_edges(n, &edges, false, features, labels, node_task)?;

    let mut tasks = Vec::with_capacity(params.num_tasks);
    for t in 0..params.num_tasks {
        let class_ids: Vec<usize> =
            (t * params.classes_per_task..(t + 1) * params.classes_per_task).collect();
        let node_ids: Vec<usize> =
            (class_ids[0] * npc..(class_ids[class_ids.len() - 1] + 1) * npc).collect();
        let mut train_ids = Vec::new();
        let mut test_ids = Vec::new();
        for &c in &class_ids {
            let mut ids: Vec<usize> = (c * npc..(c + 1) * npc).collect();
            shuffle(&mut ids, &mut rng);
            let mut k = (params.train_fraction * npc as f64).round() as usize;
            if npc >= 2 {
                k = k.clamp(1, npc - 1);
            } else {
                k = 1;
            }
            train_ids.extend_from_slice(&ids[..k]);
            test_ids.extend_from_slice(&ids[k..]);
        }
        train_ids.sort_unstable();
        test_ids.sort_unstable();
        tasks.push(TaskView {
            task_id: t,
            node_ids,
            train_ids,
            test_ids,
            class_ids,
        });
    }
    let sequence = TaskSequence {
        tasks,
        classes_per_task: params.classes_per_task,
    };
    sequence.validate(&graph)?;
    Ok((graph, sequence))
}

/// Fisher-Yates shuffle driven by the generator's own stream, so the split
/// is pinned by the dataset seed independent of `rand`'s helper traits.
fn shuffle(ids: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..ids.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        ids.swap(i, j);
    }
}
