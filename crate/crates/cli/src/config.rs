//! Experiment configuration: a flat struct deserializable from a TOML file,
//! with every field overridable by a command-line flag (flags win).

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use ecgl_core::{
    ImportanceConfig, Method, Regime, RegimeConfig, SbmParams, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Full experiment description. Defaults mirror the engine's defaults:
/// budget 1000, diversity ratio 0.25, replay weight 1, damping 0.85,
/// 200 epochs at learning rate 0.005 with weight decay 5e-4, one hidden
/// layer of 256, seeds 0..4.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset file to load; absent means generate from `sbm`.
    pub dataset_path: Option<PathBuf>,
    pub sbm: SbmParams,
    pub method: String,
    pub regime: String,
    pub sample_budget: usize,
    pub diversity_ratio: f64,
    pub damping: f64,
    pub rbf_gamma: Option<f64>,
    pub pagerank_tolerance: f64,
    pub pagerank_max_iterations: usize,
    pub use_taylor_surrogate: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub replay_lambda: f64,
    pub hidden_dims: Vec<usize>,
    pub batch_size: Option<usize>,
    pub seeds: Vec<u64>,
    /// Where outputs land; excluded from serialized config echoes so that
    /// metric files stay byte-identical regardless of run location.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub dump_sampler_csv: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let importance = ImportanceConfig::default();
        let train = TrainConfig::default();
        let regime = RegimeConfig::default();
        ExperimentConfig {
            dataset_path: None,
            sbm: SbmParams::default(),
            method: "ecgl".into(),
            regime: "task_il".into(),
            sample_budget: regime.sample_budget,
            diversity_ratio: regime.diversity_ratio,
            damping: importance.damping_d,
            rbf_gamma: importance.rbf_gamma,
            pagerank_tolerance: importance.tolerance,
            pagerank_max_iterations: importance.max_iterations,
            use_taylor_surrogate: importance.use_taylor_surrogate,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            weight_decay: train.weight_decay,
            replay_lambda: train.replay_lambda,
            hidden_dims: regime.hidden_dims,
            batch_size: train.batch_size,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("ecgl-out"),
            dump_sampler_csv: false,
        }
    }
}

impl ExperimentConfig {
    pub fn method(&self) -> Result<Method, CliError> {
        Method::from_str(&self.method).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn regime(&self) -> Result<Regime, CliError> {
        Regime::from_str(&self.regime).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Driver-level config for one seed.
    pub fn regime_config(&self, seed: u64) -> Result<RegimeConfig, CliError> {
        let config = RegimeConfig {
            regime: self.regime()?,
            sample_budget: self.sample_budget,
            diversity_ratio: self.diversity_ratio,
            importance: ImportanceConfig {
                damping_d: self.damping,
                rbf_gamma: self.rbf_gamma,
                max_iterations: self.pagerank_max_iterations,
                tolerance: self.pagerank_tolerance,
                use_taylor_surrogate: self.use_taylor_surrogate,
            },
            train: TrainConfig {
                epochs: self.epochs,
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                replay_lambda: self.replay_lambda,
                seed,
                batch_size: self.batch_size,
            },
            hidden_dims: self.hidden_dims.clone(),
            dump_sampler_csv: self.dump_sampler_csv,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        Ok(config)
    }
}

/// Flag-level overrides; every field is optional and wins over the file.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigOverrides {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file; omit to generate a synthetic graph.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub sample_budget: Option<usize>,
    #[arg(long)]
    pub diversity_ratio: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub rbf_gamma: Option<f64>,
    #[arg(long)]
    pub pagerank_tolerance: Option<f64>,
    #[arg(long)]
    pub pagerank_max_iterations: Option<usize>,
    /// Compute the attribute term exactly instead of with the surrogate.
    #[arg(long)]
    pub exact_attribute_term: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub replay_lambda: Option<f64>,
    /// Comma-separated hidden layer widths, e.g. `256` or `128,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated seed list, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Write per-task sampler CSVs next to the run outputs.
    #[arg(long)]
    pub dump_sampler_csv: bool,

    // synthetic-graph parameters
    #[arg(long)]
    pub sbm_tasks: Option<usize>,
    #[arg(long)]
    pub sbm_classes_per_task: Option<usize>,
    #[arg(long)]
    pub sbm_nodes_per_class: Option<usize>,
    #[arg(long)]
    pub sbm_p_intra: Option<f64>,
    #[arg(long)]
    pub sbm_p_inter: Option<f64>,
    #[arg(long)]
    pub sbm_p_intertask: Option<f64>,
    #[arg(long)]
    pub sbm_feature_dim: Option<usize>,
    #[arg(long)]
    pub sbm_feature_shift: Option<f64>,
    #[arg(long)]
    pub sbm_seed: Option<u64>,
    #[arg(long)]
    pub sbm_train_fraction: Option<f64>,
}

impl ConfigOverrides {
    /// Precedence: flags over the `ECGL_OUTPUT_DIR` environment variable
    /// over the config file over built-in defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("bad config file: {e}")))?
            }
            None => ExperimentConfig::default(),
        };
        if let Ok(dir) = std::env::var("ECGL_OUTPUT_DIR") {
            config.output_dir = PathBuf::from(dir);
        }
        self.apply(&mut config);
        Ok(config)
    }

    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(v) = &self.dataset {
            config.dataset_path = Some(v.clone());
        }
        if let Some(v) = &self.method {
            config.method = v.clone();
        }
        if let Some(v) = &self.regime {
            config.regime = v.clone();
        }
        if let Some(v) = self.sample_budget {
            config.sample_budget = v;
        }
        if let Some(v) = self.diversity_ratio {
            config.diversity_ratio = v;
        }
        if let Some(v) = self.damping {
            config.damping = v;
        }
        if let Some(v) = self.rbf_gamma {
            config.rbf_gamma = Some(v);
        }
        if let Some(v) = self.pagerank_tolerance {
            config.pagerank_tolerance = v;
        }
        if let Some(v) = self.pagerank_max_iterations {
            config.pagerank_max_iterations = v;
        }
        if self.exact_attribute_term {
            config.use_taylor_surrogate = false;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            config.weight_decay = v;
        }
        if let Some(v) = self.replay_lambda {
            config.replay_lambda = v;
        }
        if let Some(v) = &self.hidden_dims {
            config.hidden_dims = v.clone();
        }
        if let Some(v) = self.batch_size {
            config.batch_size = Some(v);
        }
        if let Some(v) = &self.seeds {
            config.seeds = v.clone();
        }
        if let Some(v) = &self.output_dir {
            config.output_dir = v.clone();
        }
        if self.dump_sampler_csv {
            config.dump_sampler_csv = true;
        }
        if let Some(v) = self.sbm_tasks {
            config.sbm.num_tasks = v;
        }
        if let Some(v) = self.sbm_classes_per_task {
            config.sbm.classes_per_task = v;
        }
        if let Some(v) = self.sbm_nodes_per_class {
            config.sbm.nodes_per_class = v;
        }
        if let Some(v) = self.sbm_p_intra {
            config.sbm.p_intra = v;
        }
        if let Some(v) = self.sbm_p_inter {
            config.sbm.p_inter = v;
        }
        if let Some(v) = self.sbm_p_intertask {
            config.sbm.p_intertask = v;
        }
        if let Some(v) = self.sbm_feature_dim {
            config.sbm.feature_dim = v;
        }
        if let Some(v) = self.sbm_feature_shift {
            config.sbm.feature_shift = v;
        }
        if let Some(v) = self.sbm_seed {
            config.sbm.seed = v;
        }
        if let Some(v) = self.sbm_train_fraction {
            config.sbm.train_fraction = v;
        }
    }
}
