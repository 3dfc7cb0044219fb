//! Subcommand implementations: `run`, `gen`, `bench`, `validate`.

use std::fs;
use std::path::{Path, PathBuf};

use ecgl_core::{
    generate_sbm, load_dataset, metrics, model, run_continual, save_dataset, Graph, Method,
    RunRecord, TaskSequence,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

fn data_err(e: ecgl_core::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn numeric_err(e: ecgl_core::Error) -> CliError {
    CliError::Numeric(e.to_string())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Loads the configured dataset or generates the synthetic one.
pub fn resolve_dataset(config: &ExperimentConfig) -> Result<(Graph, TaskSequence), CliError> {
    match &config.dataset_path {
        Some(path) => load_dataset(path).map_err(data_err),
        None => generate_sbm(&config.sbm).map_err(data_err),
    }
}

/// The determinism-safe metric file: everything a run produced except
/// wall-clock timings.
#[derive(Serialize)]
struct MetricsFile<'a> {
    method: &'a str,
    regime: &'a str,
    seed: u64,
    performance_matrix: &'a ecgl_core::PerformanceMatrix,
    average_accuracy: &'a [f64],
    average_forgetting: &'a [Option<f64>],
    buffer_sizes: &'a [usize],
    convergence_flags: &'a [bool],
    train_epoch_spmv_ops: &'a [u64],
    resolved_rbf_gamma: f64,
    config: &'a ExperimentConfig,
}

fn metrics_json(record: &RunRecord, config: &ExperimentConfig) -> Result<String, CliError> {
    let file = MetricsFile {
        method: &record.method,
        regime: &record.regime,
        seed: record.seed,
        performance_matrix: &record.performance,
        average_accuracy: &record.average_accuracy,
        average_forgetting: &record.average_forgetting,
        buffer_sizes: &record.buffer_sizes,
        convergence_flags: &record.convergence_flags,
        train_epoch_spmv_ops: &record.train_epoch_spmv_ops,
        resolved_rbf_gamma: record.resolved_rbf_gamma,
        config,
    };
    serde_json::to_string_pretty(&file).map_err(|e| CliError::Numeric(e.to_string()))
}

#[derive(Serialize)]
struct SeriesStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize)]
struct AggregateFile {
    seeds: Vec<u64>,
    final_average_accuracy_mean: f64,
    final_average_accuracy_std: f64,
    final_average_forgetting_mean: Option<f64>,
    final_average_forgetting_std: Option<f64>,
    average_accuracy: SeriesStats,
    average_forgetting: Vec<Option<(f64, f64)>>,
}

fn aggregate(records: &[RunRecord], seeds: &[u64]) -> AggregateFile {
    let num_tasks = records[0].average_accuracy.len();
    let mut aa_mean = Vec::with_capacity(num_tasks);
    let mut aa_std = Vec::with_capacity(num_tasks);
    let mut af_stats = Vec::with_capacity(num_tasks);
    for i in 0..num_tasks {
        let aa: Vec<f64> = records.iter().map(|r| r.average_accuracy[i]).collect();
        let (m, s) = metrics::mean_std(&aa);
        aa_mean.push(m);
        aa_std.push(s);
        let af: Option<Vec<f64>> = records
            .iter()
            .map(|r| r.average_forgetting[i])
            .collect::<Option<Vec<f64>>>();
        af_stats.push(af.map(|values| metrics::mean_std(&values)));
    }
    let last = num_tasks - 1;
    AggregateFile {
        seeds: seeds.to_vec(),
        final_average_accuracy_mean: aa_mean[last],
        final_average_accuracy_std: aa_std[last],
        final_average_forgetting_mean: af_stats[last].map(|(m, _)| m),
        final_average_forgetting_std: af_stats[last].map(|(_, s)| s),
        average_accuracy: SeriesStats {
            mean: aa_mean,
            std: aa_std,
        },
        average_forgetting: af_stats,
    }
}

#[derive(Serialize)]
struct WeightSidecar<'a> {
    seed: u64,
    dims: Vec<usize>,
    config: &'a ExperimentConfig,
}

/// Runs the configured experiment once per seed and writes, per seed:
/// `run_record.json` (everything, timings included), `metrics.json`
/// (deterministic fields only), `performance_matrix.csv`, `timing.csv`,
/// and the final weight checkpoint with its JSON sidecar. One
/// `aggregate.json` with mean±std AA/AF across seeds completes the set.
pub fn cmd_run(config: &ExperimentConfig) -> Result<(), CliError> {
    let method = config.method()?;
    let (graph, tasks) = resolve_dataset(config)?;
    if config.seeds.is_empty() {
        return Err(CliError::Config("at least one seed is required".into()));
    }
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create output dir: {e}")))?;

    let mut records = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let regime_config = config.regime_config(seed)?;
        let outcome = run_continual(&graph, &tasks, &regime_config, method).map_err(numeric_err)?;
        let seed_dir = config.output_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&seed_dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", seed_dir.display())))?;

        let record = &outcome.record;
        write_file(
            &seed_dir.join("run_record.json"),
            serde_json::to_string_pretty(record).map_err(|e| CliError::Numeric(e.to_string()))?,
        )?;
        write_file(&seed_dir.join("metrics.json"), metrics_json(record, config)?)?;
        write_file(
            &seed_dir.join("performance_matrix.csv"),
            record.performance.to_csv(),
        )?;
        write_file(&seed_dir.join("timing.csv"), timing_csv(record))?;
        if let Some(dumps) = &record.sampler_dumps {
            for (t, csv) in dumps.iter().enumerate() {
                write_file(&seed_dir.join(format!("sampler_task_{t}.csv")), csv)?;
            }
        }
        model::save_weights(seed_dir.join("weights.bin"), &outcome.final_weights)
            .map_err(data_err)?;
        let sidecar = WeightSidecar {
            seed,
            dims: outcome.final_weights.dims(),
            config,
        };
        write_file(
            &seed_dir.join("weights.json"),
            serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Numeric(e.to_string()))?,
        )?;

        let last = record.average_accuracy.len() - 1;
        println!(
            "seed {seed}: final AA {:.4}{}",
            record.average_accuracy[last],
            match record.average_forgetting[last] {
                Some(af) => format!(", final AF {af:+.4}"),
                None => String::new(),
            }
        );
        records.push(outcome.record);
    }

    let agg = aggregate(&records, &config.seeds);
    write_file(
        &config.output_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&agg).map_err(|e| CliError::Numeric(e.to_string()))?,
    )?;
    println!(
        "aggregate over {} seeds: AA {:.4} ± {:.4}{}",
        config.seeds.len(),
        agg.final_average_accuracy_mean,
        agg.final_average_accuracy_std,
        match (agg.final_average_forgetting_mean, agg.final_average_forgetting_std) {
            (Some(m), Some(s)) => format!(", AF {m:+.4} ± {s:.4}"),
            _ => String::new(),
        }
    );
    Ok(())
}

fn timing_csv(record: &RunRecord) -> String {
    let mut out = String::from("task,train_ms_per_epoch,inference_ms,sampler_ms\n");
    for (t, timing) in record.timings.iter().enumerate() {
        out.push_str(&format!(
            "{t},{:.4},{:.4},{:.4}\n",
            timing.train_ms_per_epoch, timing.inference_ms, timing.sampler_ms
        ));
    }
    out
}

/// Generates a synthetic dataset file.
pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let (graph, tasks) = generate_sbm(&config.sbm).map_err(|e| CliError::Config(e.to_string()))?;
    save_dataset(out, &graph, &tasks).map_err(data_err)?;
    println!(
        "wrote {} ({} nodes, {} edges, {} tasks)",
        out.display(),
        graph.num_nodes(),
        graph.edge_count(),
        tasks.num_tasks()
    );
    Ok(())
}

/// Lints a dataset file: loading already runs every invariant check.
pub fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let (graph, tasks) = load_dataset(path).map_err(data_err)?;
    println!(
        "{}: OK ({} nodes, {} edges, {} feature dims, {} tasks, {} classes)",
        path.display(),
        graph.num_nodes(),
        graph.edge_count(),
        graph.feature_dim(),
        tasks.num_tasks(),
        graph.num_classes()
    );
    Ok(())
}

/// Runs the MLP-trained and GCN-trained variants on the same dataset and
/// seed, writes the timing table, and prints the speedup ratios.
pub fn cmd_bench(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let (graph, tasks) = resolve_dataset(config)?;
    let seed = *config.seeds.first().unwrap_or(&0);
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create output dir: {e}")))?;

    let mut samples = Vec::new();
    for method in [Method::EcglGcnTrainer, Method::Ecgl] {
        let regime_config = config.regime_config(seed)?;
        let outcome = run_continual(&graph, &tasks, &regime_config, method).map_err(numeric_err)?;
        samples.push(metrics::MethodTiming {
            method: method.name().to_string(),
            train_ms: outcome
                .record
                .timings
                .iter()
                .map(|t| t.train_ms_per_epoch)
                .collect(),
            infer_ms: outcome.record.timings.iter().map(|t| t.inference_ms).collect(),
        });
    }
    let report = metrics::timing_report(&samples).map_err(numeric_err)?;
    let csv = report.to_csv();
    let path = config.output_dir.join("bench_timing.csv");
    write_file(&path, &csv)?;
    print!("{csv}");
    if let Some((train, infer)) = report.speedup("ecgl_gcn_trainer", "ecgl") {
        println!("training speedup: {train:.2}x, inference speedup: {infer:.2}x");
    }
    Ok(path)
}
