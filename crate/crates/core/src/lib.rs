//! Continual node classification on growing graphs.
//!
//! The engine trains a plain MLP on node features, replays a compact memory
//! buffer selected by attributed-PageRank importance and neighborhood
//! diversity, and transfers the trained weights into a graph convolutional
//! network for inference, where message passing is re-introduced. Training
//! therefore never touches the sparse structure; inference does.
//!
//! Modules map onto the moving parts:
//! - [`graph`]: CSR attributed graphs, task views, induced subgraphs.
//! - [`io`]: the line-oriented dataset file format.
//! - [`sbm`]: seeded stochastic-block-model generator with inter-task edges.
//! - [`replay`]: importance scoring (exact and Taylor-surrogate attribute
//!   terms), diversity scoring, and memory-buffer updates.
//! - [`model`]: MLP training with manual gradients, masked cross-entropy,
//!   and GCN inference over the shared weight space.
//! - [`adjacency`]: the symmetric-normalized adjacency operator and the
//!   sparse-traversal counter.
//! - [`driver`]: the per-task continual loop for all methods and regimes.
//! - [`metrics`]: performance matrix, average accuracy/forgetting, timing.

pub mod adjacency;
pub mod driver;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod replay;
pub mod sbm;

mod error;

pub use error::{Error, Result};

pub use adjacency::NormalizedAdjacency;
pub use driver::{run_continual, Method, Regime, RegimeConfig, RunOutcome, RunRecord};
pub use graph::{induced_subgraph, task_subgraph, Graph, Subgraph, TaskSequence, TaskView};
pub use io::{load_dataset, save_dataset};
pub use metrics::{timing_report, MethodTiming, PerformanceMatrix, TimingReport};
pub use model::{
    cross_entropy, gcn_inference, gcn_logits, init_weights, mlp_forward, train_step, Batch,
    ModelWeights, TrainConfig,
};
pub use replay::{
    build_taylor_surrogate, diversity_scores, exact_attribute_transition_apply, exact_r,
    importance_scores, surrogate_r, transition_matrix_apply, ImportanceConfig, ImportanceRun,
    MemoryBuffer, MemoryRecord, TaylorSurrogate,
};
pub use sbm::{generate_sbm, SbmParams};
