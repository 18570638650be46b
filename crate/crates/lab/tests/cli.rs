use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocgan-lab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(config: &Path) {
    let out = lab(&["run", config.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_record(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON record")
}

#[derive(Debug, serde::Deserialize)]
struct Row {
    experiment_id: String,
    grid_label: String,
    metric: String,
    value: f64,
    seed: u64,
}

fn rows(dir: &Path) -> Vec<Row> {
    csv::Reader::from_path(dir.join("metrics.csv")).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

const TINY_TASK: &str = r#""task": {"side": 16, "train_count": 24, "test_count": 4},
  "train": {"iterations": 3, "batch_size": 4}"#;

#[test]
fn unknown_experiment_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"experiment": "gan_zoo", "output_dir": "out", "seeds": [0]}"#);
    let out = lab(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "experiment");
}

#[test]
fn nested_field_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"experiment": "image_denoise", "output_dir": "out", "seeds": [0], "train": {"iterations": -1}}"#,
    );
    let out = lab(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "train.iterations");
}

#[test]
fn divergence_exits_3_with_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "diverge.json",
        r#"{"experiment": "image_denoise", "output_dir": "out", "seeds": [4], "modes": ["cgan"],
            "task": {"side": 16, "train_count": 8, "test_count": 2},
            "train": {"iterations": 5, "batch_size": 4, "learning_rate": 1e308}}"#,
    );
    let out = lab(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_record(&out)["seed"], 4);
}

#[test]
fn theory_value_at_optimum_is_minus_log_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "theory.json",
        r#"{"experiment": "theory", "output_dir": "out", "seeds": [0], "theory": {"trials": 5}}"#,
    );
    run_ok(&cfg);
    let out = dir.path().join("out");
    let row = rows(&out)
        .into_iter()
        .find(|r| r.metric == "value_at_dstar" && r.grid_label == "equal")
        .expect("equal-distribution row");
    assert!((row.value + 4f64.ln()).abs() <= 1e-10, "{}", row.value);
    assert!(out.join("resolved_config.json").exists());
}

#[test]
fn synthetic_rows_and_manifold_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "synthetic.json",
        r#"{"experiment": "synthetic", "output_dir": "out", "seeds": [0, 1],
            "synthetic": {"max_iterations": 40, "eval_every": 20, "val_points": 64, "test_points": 100}}"#,
    );
    run_ok(&cfg);
    let out = dir.path().join("out");
    let rows = rows(&out);
    for seed in [0, 1] {
        for metric in ["l1_baseline", "l1_twopathway"] {
            assert!(rows.iter().any(|r| r.seed == seed && r.metric == metric && r.experiment_id == "synthetic"));
        }
    }
    let svg = std::fs::read_to_string(out.join("seed_0/manifold3d.svg")).unwrap();
    assert_eq!(svg.matches("output ").count(), 4);
    assert!(out.join("seed_1/checkpoint/twopathway/manifest.json").exists());
}

#[test]
fn resolved_config_materializes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.json", r#"{"experiment": "theory", "output_dir": "out", "seeds": [3]}"#);
    run_ok(&cfg);
    let resolved: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["batch_size"], 8);
    assert_eq!(resolved["synthetic"]["test_points"], 6400);
    assert_eq!(resolved["corruption"], "25/0");
}

#[test]
fn image_run_writes_metrics_checkpoints_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"experiment": "robustness_grid", "output_dir": "out", "seeds": [0], "checkpoint_every": 2, {TINY_TASK}}}"#
    );
    let cfg = write_config(dir.path(), "grid.json", &body);
    run_ok(&cfg);
    let out = dir.path().join("out");
    let rows = rows(&out);
    // Six grid cells, four metrics each, two models.
    assert_eq!(rows.len(), 6 * 4 * 2);
    assert!(rows.iter().any(|r| r.experiment_id == "robustness_grid/rocgan" && r.grid_label == "50/0"));
    let model = out.join("seed_0/rocgan");
    for file in ["train_metrics.csv", "loss_curve.csv", "loss_curve.svg", "checkpoint/manifest.json"] {
        assert!(model.join(file).exists(), "{file}");
    }
    assert!(model.join("checkpoints/step_000002/manifest.json").exists());
    let hist = std::fs::read_to_string(model.join("hist_25_0.svg")).unwrap();
    assert_eq!(hist.matches("fill-opacity=\"0.55\"").count(), 20);
}

#[test]
fn metrics_do_not_depend_on_worker_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "2")] {
        let body = format!(
            r#"{{"experiment": "image_denoise", "output_dir": "{name}", "seeds": [1, 2], "modes": ["rocgan"], {TINY_TASK}}}"#
        );
        let cfg = write_config(dir.path(), &format!("{name}.json"), &body);
        let out = Command::new(env!("CARGO_BIN_EXE_rocgan-lab"))
            .args(["run", cfg.to_str().unwrap()])
            .env("ROCGAN_LAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(dir.path().join(name).join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn ablation_rows_per_seed_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"experiment": "ablation_lambda", "output_dir": "out", "seeds": [0, 1], "ablation": {{"lambda_l": [1, 25]}}, {TINY_TASK}}}"#
    );
    run_ok(&write_config(dir.path(), "ablation.json", &body));
    let rows = rows(&dir.path().join("out"));
    for seed in [0, 1] {
        assert_eq!(rows.iter().filter(|r| r.seed == seed).count(), 2);
    }
    assert!(rows.iter().all(|r| r.metric == "ssim"));

    let body = format!(
        r#"{{"experiment": "ablation_lambda", "output_dir": "zero", "seeds": [0], "ablation": {{"lambda_l": [0]}}, {TINY_TASK}}}"#
    );
    run_ok(&write_config(dir.path(), "zero.json", &body));
    let rows = self::rows(&dir.path().join("zero"));
    assert_eq!(rows[0].grid_label, "lambda_l=0[ablation]");
}

#[test]
fn semi_supervised_and_aae_runs() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"experiment": "semi_supervised", "output_dir": "semi", "seeds": [0],
            "semi_supervised": {{"labelled_count": 8, "unlabelled_count": 12}}, {TINY_TASK}}}"#
    );
    run_ok(&write_config(dir.path(), "semi.json", &body));
    let ids: Vec<String> = rows(&dir.path().join("semi")).into_iter().map(|r| r.experiment_id).collect();
    assert!(ids.contains(&"semi_supervised/supervised".to_string()));
    assert!(ids.contains(&"semi_supervised/semi".to_string()));

    let body = format!(
        r#"{{"experiment": "image_denoise", "output_dir": "aae", "seeds": [0], "modes": ["aae"], {TINY_TASK}}}"#
    );
    run_ok(&write_config(dir.path(), "aae.json", &body));
    assert_eq!(rows(&dir.path().join("aae")).len(), 4);
}

#[test]
fn fgsm_and_linear_rows() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(r#"{{"experiment": "fgsm", "output_dir": "fgsm", "seeds": [0], {TINY_TASK}}}"#);
    run_ok(&write_config(dir.path(), "fgsm.json", &body));
    let rows = self::rows(&dir.path().join("fgsm"));
    let eta = rows.iter().filter(|r| r.metric == "max_abs_eta").map(|r| r.value).fold(0.0, f64::max);
    assert!(eta <= 0.01 + 1e-15);

    let cfg = write_config(
        dir.path(),
        "linear.json",
        r#"{"experiment": "linear_analogy", "output_dir": "lin", "seeds": [0],
            "linear_analogy": {"train_count": 120, "probe_count": 5}}"#,
    );
    run_ok(&cfg);
    let rows = self::rows(&dir.path().join("lin"));
    let get = |m: &str| rows.iter().find(|r| r.metric == m).unwrap().value;
    assert!(get("d_subspace") < get("d_ambient"));
}

#[test]
fn plot_is_deterministic_and_rejects_bad_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    std::fs::write(&csv, "step,loss\n1,0.9\n2,0.5\n3,0.4\n").unwrap();
    let mut svgs = Vec::new();
    for name in ["a.svg", "b.svg"] {
        let out = dir.path().join(name);
        let status = lab(&["plot", csv.to_str().unwrap(), "--kind", "curve", "-o", out.to_str().unwrap()]);
        assert!(status.status.success());
        svgs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(svgs[0], svgs[1]);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "step,loss\n1,abc\n").unwrap();
    let out =
        lab(&["plot", bad.to_str().unwrap(), "--kind", "curve", "-o", dir.path().join("c.svg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_quick_checks_pass() {
    let out = lab(&["verify"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
