//! The per-task continual loop: train on the incoming task (plus replay),
//! update the memory buffer, and re-evaluate every task seen so far.
//!
//! Four methods share the loop. `ecgl` trains the MLP and infers with the
//! GCN; `ecgl_gcn_trainer` is the ablation that keeps message passing in
//! the training loop; `finetune` is `ecgl` without any replay (the
//! forgetting lower bound); `joint` retrains from scratch on the union of
//! all tasks seen so far (the upper bound, and it silently ignores any
//! sampling budget). Weights persist across tasks for everything except
//! `joint`, which reinitializes at every evaluation point.
//!
//! Under task-IL the logits are masked to the evaluated task's classes and
//! replay rows are masked to their origin task's classes; under class-IL
//! every mask is the union of classes seen through the current task.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::adjacency::{spmv_counter, NormalizedAdjacency};
use crate::graph::{induced_subgraph, task_subgraph, Graph, Subgraph, TaskSequence};
use crate::metrics::PerformanceMatrix;
use crate::model::{
    apply_update, gcn_inference, init_weights, loss_and_grads, Batch, ModelWeights, TrainConfig,
};
use crate::replay::{
    diversity_scores, importance_scores, selection_csv, ImportanceConfig, MemoryBuffer,
};
use crate::{Error, Result};

/// Continual-learning method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ecgl,
    EcglGcnTrainer,
    Finetune,
    Joint,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ecgl => "ecgl",
            Method::EcglGcnTrainer => "ecgl_gcn_trainer",
            Method::Finetune => "finetune",
            Method::Joint => "joint",
        }
    }

    fn uses_replay(&self) -> bool {
        matches!(self, Method::Ecgl | Method::EcglGcnTrainer)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecgl" => Ok(Method::Ecgl),
            "ecgl_gcn_trainer" => Ok(Method::EcglGcnTrainer),
            "finetune" => Ok(Method::Finetune),
            "joint" => Ok(Method::Joint),
            other => Err(Error::InvalidParameter(format!(
                "unknown method '{other}' (expected ecgl, ecgl_gcn_trainer, finetune, joint)"
            ))),
        }
    }
}

/// Evaluation regime: task-incremental (task identity given at test time)
/// or class-incremental (predict among all classes seen so far).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    TaskIl,
    ClassIl,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::TaskIl => "task_il",
            Regime::ClassIl => "class_il",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task_il" => Ok(Regime::TaskIl),
            "class_il" => Ok(Regime::ClassIl),
            other => Err(Error::InvalidParameter(format!(
                "unknown regime '{other}' (expected task_il or class_il)"
            ))),
        }
    }
}

/// Everything a continual run needs besides the data and the method.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeConfig {
    pub regime: Regime,
    /// Memory-buffer budget per task.
    pub sample_budget: usize,
    /// Fraction of the budget selected by diversity (the rest by importance).
    pub diversity_ratio: f64,
    pub importance: ImportanceConfig,
    pub train: TrainConfig,
    /// Hidden layer widths of the shared MLP/GCN.
    pub hidden_dims: Vec<usize>,
    /// Collect per-task sampling CSVs into the run record.
    pub dump_sampler_csv: bool,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            regime: Regime::TaskIl,
            sample_budget: 1000,
            diversity_ratio: 0.25,
            importance: ImportanceConfig::default(),
            train: TrainConfig::default(),
            hidden_dims: vec![256],
            dump_sampler_csv: false,
        }
    }
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.diversity_ratio) {
            return Err(Error::InvalidParameter(format!(
                "diversity_ratio must lie in [0,1], got {}",
                self.diversity_ratio
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidParameter("hidden dims must be >= 1".into()));
        }
        self.importance.validate()?;
        self.train.validate()
    }
}

/// Wall-clock measurements for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTiming {
    pub train_ms_per_epoch: f64,
    pub inference_ms: f64,
    pub sampler_ms: f64,
}

/// Everything a continual run produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub regime: String,
    pub seed: u64,
    /// Echo of the exact configuration that produced this record.
    pub config: RegimeConfig,
    pub performance: PerformanceMatrix,
    /// Average accuracy after each task.
    pub average_accuracy: Vec<f64>,
    /// Average forgetting after each task; `None` at the first.
    pub average_forgetting: Vec<Option<f64>>,
    pub buffer_sizes: Vec<usize>,
    /// Importance-walk convergence per task (`true` when no walk ran).
    pub convergence_flags: Vec<bool>,
    /// Sparse traversals performed inside each task's training epochs.
    pub train_epoch_spmv_ops: Vec<u64>,
    pub resolved_rbf_gamma: f64,
    pub timings: Vec<TaskTiming>,
    #[serde(skip)]
    pub sampler_dumps: Option<Vec<String>>,
}

/// A finished run: its record plus the final model parameters (useful for
/// checkpointing and for asserting that training stayed numerically clean).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub final_weights: ModelWeights,
}

/// Class mask for evaluating `task_eval` after training through
/// `tasks_seen`: the evaluated task's own classes under task-IL, the union
/// of all seen classes under class-IL.
pub fn class_mask_for(
    regime: Regime,
    tasks: &TaskSequence,
    task_eval: usize,
    tasks_seen: usize,
) -> Result<Vec<usize>> {
    if tasks_seen >= tasks.num_tasks() || task_eval > tasks_seen {
        return Err(Error::InvalidParameter(format!(
            "task_eval {task_eval} / tasks_seen {tasks_seen} invalid for {} tasks",
            tasks.num_tasks()
        )));
    }
    Ok(match regime {
        Regime::TaskIl => tasks.tasks[task_eval].class_ids.clone(),
        Regime::ClassIl => tasks.classes_through(tasks_seen),
    })
}

fn gather_rows(features: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    features.select(Axis(0), ids)
}

fn gather_labels(labels: &[usize], ids: &[usize]) -> Vec<usize> {
    ids.iter().map(|&v| labels[v]).collect()
}

/// Owned replay groups: one `(features, labels, mask)` triple per origin
/// task so each group can carry its own class mask.
struct ReplayGroups {
    groups: Vec<(Array2<f64>, Vec<usize>, Vec<usize>)>,
}

impl ReplayGroups {
    fn build(
        buffer: &MemoryBuffer,
        regime: Regime,
        tasks: &TaskSequence,
        current_task: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        let mut groups = Vec::new();
        for (origin, records) in buffer.grouped_by_task() {
            let mut features = Array2::zeros((records.len(), feature_dim));
            let mut labels = Vec::with_capacity(records.len());
            for (row, record) in records.iter().enumerate() {
                for (d, &v) in record.features.iter().enumerate() {
                    features[[row, d]] = v;
                }
                labels.push(record.label);
            }
            let mask = match regime {
                Regime::TaskIl => tasks.tasks[origin].class_ids.clone(),
                Regime::ClassIl => tasks.classes_through(current_task),
            };
            groups.push((features, labels, mask));
        }
        Ok(ReplayGroups { groups })
    }

    fn batches(&self) -> Vec<Batch<'_>> {
        self.groups
            .iter()
            .map(|(features, labels, mask)| Batch {
                features: features.view(),
                labels,
                class_mask: Some(mask),
            })
            .collect()
    }
}

/// Row-chunk boundaries for optional mini-batch training; the full range
/// when no batch size is configured.
fn chunk_ranges(rows: usize, batch_size: Option<usize>) -> Vec<std::ops::Range<usize>> {
    match batch_size {
        Some(b) if b > 0 && b < rows => {
            let mut out = Vec::new();
            let mut start = 0;
            while start < rows {
                out.push(start..(start + b).min(rows));
                start += b;
            }
            out
        }
        _ => vec![0..rows],
    }
}

/// Runs the full continual protocol and fills a [`RunRecord`].
pub fn run_continual(
    graph: &Graph,
    tasks: &TaskSequence,
    config: &RegimeConfig,
    method: Method,
) -> Result<RunOutcome> {
    config.validate()?;
    let num_tasks = tasks.num_tasks();
    let num_classes = graph.num_classes();
    let feature_dim = graph.feature_dim();
    let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
    dims.push(feature_dim);
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(num_classes);

    // gamma is resolved once on the whole dataset so every task scores with
    // the same bandwidth
    let resolved_gamma = config
        .importance
        .rbf_gamma
        .unwrap_or_else(|| crate::replay::default_gamma(&graph.features.view()));
    let importance_config = ImportanceConfig {
        rbf_gamma: Some(resolved_gamma),
        ..config.importance.clone()
    };

    let mut weights = init_weights(&dims, config.train.seed)?;
    let mut buffer = MemoryBuffer::new(config.sample_budget, config.diversity_ratio)?;
    let mut performance = PerformanceMatrix::new(num_tasks);
    let mut timings = Vec::with_capacity(num_tasks);
    let mut buffer_sizes = Vec::with_capacity(num_tasks);
    let mut convergence_flags = Vec::with_capacity(num_tasks);
    let mut train_epoch_spmv_ops = Vec::with_capacity(num_tasks);
    let mut sampler_dumps = config.dump_sampler_csv.then(Vec::new);
    // inference graphs grow with the evaluated task and are reused across rows
    let mut eval_graphs: Vec<Option<Subgraph>> = (0..num_tasks).map(|_| None).collect();

    for t in 0..num_tasks {
        let task = &tasks.tasks[t];
        let epochs = config.train.epochs;

        let replay = if method.uses_replay() && !buffer.is_empty() {
            ReplayGroups::build(&buffer, config.regime, tasks, t, feature_dim)?
        } else {
            ReplayGroups { groups: Vec::new() }
        };
        let replay_batches = replay.batches();

        if method == Method::Joint {
            weights = init_weights(&dims, config.train.seed)?;
        }

        let spmv_before = spmv_counter::value();
        let train_start = Instant::now();
        match method {
            Method::Ecgl | Method::Finetune => {
                let x = gather_rows(&graph.features, &task.train_ids);
                let y = gather_labels(&graph.labels, &task.train_ids);
                let mask = class_mask_for(config.regime, tasks, t, t)?;
                let rows = x.nrows();
                let chunks = chunk_ranges(rows, config.train.batch_size);
                for _ in 0..epochs {
                    for range in &chunks {
                        let chunk_x = x.slice(ndarray::s![range.clone(), ..]);
                        let batch = Batch {
                            features: chunk_x,
                            labels: &y[range.clone()],
                            class_mask: Some(&mask),
                        };
                        let (_, grads) = loss_and_grads(
                            &weights,
                            Some(&batch),
                            &replay_batches,
                            config.train.replay_lambda,
                            None,
                        )?;
                        apply_update(&mut weights, &grads, &config.train);
                    }
                }
            }
            Method::EcglGcnTrainer => {
                // message passing stays inside the training-node-induced
                // subgraph: test rows are off limits during training
                let sub = induced_subgraph(graph, &task.train_ids)?;
                let adjacency = NormalizedAdjacency::new(&sub.graph);
                let y = sub.graph.labels.clone();
                let mask = class_mask_for(config.regime, tasks, t, t)?;
                for _ in 0..epochs {
                    let batch = Batch {
                        features: sub.graph.features.view(),
                        labels: &y,
                        class_mask: Some(&mask),
                    };
                    let (_, grads) = loss_and_grads(
                        &weights,
                        Some(&batch),
                        &replay_batches,
                        config.train.replay_lambda,
                        Some(&adjacency),
                    )?;
                    apply_update(&mut weights, &grads, &config.train);
                }
            }
            Method::Joint => {
                // union of all seen training sets, each row masked per its
                // own task's regime rules
                let mut groups = Vec::with_capacity(t + 1);
                for s in 0..=t {
                    let tv = &tasks.tasks[s];
                    let x = gather_rows(&graph.features, &tv.train_ids);
                    let y = gather_labels(&graph.labels, &tv.train_ids);
                    let mask = class_mask_for(config.regime, tasks, s, t)?;
                    groups.push((x, y, mask));
                }
                let batches: Vec<Batch> = groups
                    .iter()
                    .map(|(x, y, mask)| Batch {
                        features: x.view(),
                        labels: y,
                        class_mask: Some(mask),
                    })
                    .collect();
                for _ in 0..epochs {
                    let (_, grads) = loss_and_grads(&weights, None, &batches, 1.0, None)?;
                    apply_update(&mut weights, &grads, &config.train);
                }
            }
        }
        let train_ms_per_epoch = train_start.elapsed().as_secs_f64() * 1e3 / epochs as f64;
        train_epoch_spmv_ops.push(spmv_counter::value() - spmv_before);

        // sampling runs once per task, after training on it
        let sampler_start = Instant::now();
        let mut converged = true;
        if method.uses_replay() && config.sample_budget > 0 {
            let sub = task_subgraph(graph, tasks, t, false)?;
            let run = importance_scores(&sub.graph, &sub.graph.features.view(), &importance_config)?;
            converged = run.converged;
            let div = diversity_scores(&sub.graph, &sub.graph.features.view());
            // lift subgraph-local scores back to full-graph node ids
            let mut imp_full = vec![0.0; graph.num_nodes()];
            let mut div_full = vec![0.0; graph.num_nodes()];
            for (li, &oi) in sub.orig_ids.iter().enumerate() {
                imp_full[oi] = run.scores[li];
                div_full[oi] = div[li];
            }
            let summary = buffer.update(graph, task, &imp_full, &div_full);
            if let Some(dumps) = sampler_dumps.as_mut() {
                dumps.push(selection_csv(task, &imp_full, &div_full, &summary));
            }
        } else if let Some(dumps) = sampler_dumps.as_mut() {
            dumps.push(String::from("node_id,importance,diversity,selected\n"));
        }
        let sampler_ms = sampler_start.elapsed().as_secs_f64() * 1e3;
        convergence_flags.push(converged);
        buffer_sizes.push(buffer.len());

        // evaluate every task seen so far on its own (past-inclusive) graph
        let mut inference_ms_total = 0.0;
        for tt in 0..=t {
            if eval_graphs[tt].is_none() {
                eval_graphs[tt] = Some(task_subgraph(graph, tasks, tt, true)?);
            }
            let sub = eval_graphs[tt].as_ref().unwrap();
            let mask = class_mask_for(config.regime, tasks, tt, t)?;
            let infer_start = Instant::now();
            let preds = gcn_inference(
                &weights,
                &sub.graph,
                &sub.graph.features.view(),
                Some(&mask),
            )?;
            inference_ms_total += infer_start.elapsed().as_secs_f64() * 1e3;
            let test_locals = sub.locals(&tasks.tasks[tt].test_ids)?;
            let correct = test_locals
                .iter()
                .filter(|&&li| preds[li] == sub.graph.labels[li])
                .count();
            let accuracy = correct as f64 / test_locals.len().max(1) as f64;
            performance.record(t, tt, accuracy)?;
        }
        timings.push(TaskTiming {
            train_ms_per_epoch,
            inference_ms: inference_ms_total / (t + 1) as f64,
            sampler_ms,
        });
    }

    let mut average_accuracy = Vec::with_capacity(num_tasks);
    let mut average_forgetting = Vec::with_capacity(num_tasks);
    for i in 0..num_tasks {
        average_accuracy.push(performance.average_accuracy(i)?);
        average_forgetting.push(if i == 0 {
            None
        } else {
            Some(performance.average_forgetting(i)?)
        });
    }

    Ok(RunOutcome {
        record: RunRecord {
            method: method.name().to_string(),
            regime: config.regime.name().to_string(),
            seed: config.train.seed,
            config: config.clone(),
            performance,
            average_accuracy,
            average_forgetting,
            buffer_sizes,
            convergence_flags,
            train_epoch_spmv_ops,
            resolved_rbf_gamma: resolved_gamma,
            timings,
            sampler_dumps,
        },
        final_weights: weights,
    })
}
