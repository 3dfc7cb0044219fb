//! End-to-end checks of the `ecgl` binary: output-file contracts,
//! determinism, dataset generation and validation, aggregate consistency.

use std::path::Path;
use std::process::{Command, Output};

fn ecgl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecgl"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary should execute")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

// small, fast experiment shared by the tests
fn run_args<'a>(out_dir: &'a str, seeds: &'a str) -> Vec<&'a str> {
    vec![
        "run",
        "--sbm-tasks",
        "3",
        "--sbm-classes-per-task",
        "2",
        "--sbm-nodes-per-class",
        "20",
        "--sbm-feature-dim",
        "4",
        "--method",
        "ecgl",
        "--regime",
        "task_il",
        "--epochs",
        "10",
        "--sample-budget",
        "10",
        "--hidden-dims",
        "8",
        "--seeds",
        seeds,
        "--output-dir",
        out_dir,
    ]
}

#[test]
fn run_writes_per_seed_records_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out_str = out_dir.to_str().unwrap();
    let output = ecgl(&run_args(out_str, "0,1,2"), &[]);
    assert_success(&output);

    for seed in 0..3 {
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        for file in [
            "run_record.json",
            "metrics.json",
            "performance_matrix.csv",
            "timing.csv",
            "weights.bin",
            "weights.json",
        ] {
            assert!(seed_dir.join(file).exists(), "missing {file} for seed {seed}");
        }
    }
    assert!(out_dir.join("aggregate.json").exists());
}

#[test]
fn identical_config_and_seed_give_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_success(&ecgl(&run_args(out_a.to_str().unwrap(), "0"), &[]));
    assert_success(&ecgl(&run_args(out_b.to_str().unwrap(), "0"), &[]));

    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(
        read(&out_a.join("seed_0/metrics.json")),
        read(&out_b.join("seed_0/metrics.json")),
        "metrics.json differs between identical runs"
    );
    assert_eq!(
        read(&out_a.join("seed_0/performance_matrix.csv")),
        read(&out_b.join("seed_0/performance_matrix.csv")),
    );
    assert_eq!(read(&out_a.join("aggregate.json")), read(&out_b.join("aggregate.json")));
}

#[test]
fn aggregate_matches_recomputation_from_per_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    assert_success(&ecgl(&run_args(out_dir.to_str().unwrap(), "0,1,2"), &[]));

    let mut finals = Vec::new();
    for seed in 0..3 {
        let text =
            std::fs::read_to_string(out_dir.join(format!("seed_{seed}/metrics.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let aa = v["average_accuracy"].as_array().unwrap();
        finals.push(aa.last().unwrap().as_f64().unwrap());
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (finals.len() - 1) as f64;

    let agg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("aggregate.json")).unwrap(),
    )
    .unwrap();
    let got_mean = agg["final_average_accuracy_mean"].as_f64().unwrap();
    let got_std = agg["final_average_accuracy_std"].as_f64().unwrap();
    assert!((got_mean - mean).abs() < 1e-12);
    assert!((got_std - var.sqrt()).abs() < 1e-12);
}

#[test]
fn gen_then_validate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("toy.graph");
    let out = ecgl(
        &[
            "gen",
            "--out",
            dataset.to_str().unwrap(),
            "--sbm-tasks",
            "23",
            "--sbm-classes-per-task",
            "2",
            "--sbm-nodes-per-class",
            "5",
            "--sbm-feature-dim",
            "3",
        ],
        &[],
    );
    assert_success(&out);

    let validate = ecgl(&["validate", "--dataset", dataset.to_str().unwrap()], &[]);
    assert_success(&validate);
    let text = String::from_utf8_lossy(&validate.stdout).to_string();
    assert!(text.contains("OK"), "{text}");
    assert!(text.contains("23 tasks"), "{text}");
    assert!(text.contains("46 classes"), "{text}");
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.graph");
    let b = dir.path().join("b.graph");
    for p in [&a, &b] {
        assert_success(&ecgl(
            &["gen", "--out", p.to_str().unwrap(), "--sbm-seed", "9"],
            &[],
        ));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn run_can_consume_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("toy.graph");
    assert_success(&ecgl(
        &[
            "gen",
            "--out",
            dataset.to_str().unwrap(),
            "--sbm-tasks",
            "2",
            "--sbm-nodes-per-class",
            "20",
        ],
        &[],
    ));
    let out_dir = dir.path().join("out");
    let output = ecgl(
        &[
            "run",
            "--dataset",
            dataset.to_str().unwrap(),
            "--method",
            "ecgl",
            "--epochs",
            "5",
            "--hidden-dims",
            "8",
            "--sample-budget",
            "5",
            "--seeds",
            "0",
            "--output-dir",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&output);
    assert!(out_dir.join("seed_0/metrics.json").exists());
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let flag_dir = dir.path().join("ignored");
    let env_dir = dir.path().join("env_out");
    let mut args = run_args("placeholder", "0");
    let idx = args.iter().position(|a| *a == "placeholder").unwrap();
    args[idx] = flag_dir.to_str().unwrap();
    // flag beats env
    assert_success(&ecgl(&args, &[("ECGL_OUTPUT_DIR", env_dir.to_str().unwrap())]));
    assert!(flag_dir.join("aggregate.json").exists());

    // without the flag, env wins
    let mut no_flag = args.clone();
    let pos = no_flag.iter().position(|a| *a == "--output-dir").unwrap();
    no_flag.drain(pos..pos + 2);
    assert_success(&ecgl(&no_flag, &[("ECGL_OUTPUT_DIR", env_dir.to_str().unwrap())]));
    assert!(env_dir.join("aggregate.json").exists());
}

#[test]
fn unknown_method_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecgl(
        &[
            "run",
            "--method",
            "sorcery",
            "--seeds",
            "0",
            "--output-dir",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn missing_dataset_exits_with_data_code() {
    let out = ecgl(&["validate", "--dataset", "/nonexistent/nowhere.graph"], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data error"));
}

#[test]
fn bench_emits_ratio_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = ecgl(
        &[
            "bench",
            "--sbm-tasks",
            "2",
            "--sbm-nodes-per-class",
            "30",
            "--epochs",
            "3",
            "--hidden-dims",
            "8",
            "--sample-budget",
            "5",
            "--seeds",
            "0",
            "--output-dir",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out);
    let csv = std::fs::read_to_string(out_dir.join("bench_timing.csv")).unwrap();
    assert!(csv.starts_with("method,train_mean_ms"));
    assert!(csv.contains("ecgl_gcn_trainer"));
    // ratio row formatted N.NNx
    let improv = csv.lines().find(|l| l.starts_with("improv,")).unwrap();
    let ratio = improv.split(',').nth(1).unwrap();
    assert!(ratio.ends_with('x'), "{ratio}");
    assert!(ratio.trim_end_matches('x').parse::<f64>().is_ok(), "{ratio}");
}

#[test]
fn bench_with_one_epoch_has_one_sample_per_phase() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = ecgl(
        &[
            "bench",
            "--sbm-tasks",
            "1",
            "--sbm-nodes-per-class",
            "20",
            "--epochs",
            "1",
            "--hidden-dims",
            "4",
            "--sample-budget",
            "2",
            "--seeds",
            "0",
            "--output-dir",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out);
    // one task, one epoch: the table still carries exactly one row per method
    let csv = std::fs::read_to_string(out_dir.join("bench_timing.csv")).unwrap();
    let methods: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("improv"))
        .collect();
    assert_eq!(methods.len(), 2, "{csv}");
}
