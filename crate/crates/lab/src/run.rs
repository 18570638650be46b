use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};

use rocgan_core::data::{gen_procedural_images, CorruptionSpec, ImageDataset};
use rocgan_core::eval::theory::{optimal_discriminator_filled, verify_propositions};
use rocgan_core::eval::{
    eval_grid, fgsm_eval, gan_value, jsd, linear_analogy_demo, run_synthetic_experiment, DiscreteJointDist, MetricRow,
    PcaDim, Restorer,
};
use rocgan_core::losses::LossWeights;
use rocgan_core::rng::seeded;
use rocgan_core::tensor::Tensor;
use rocgan_core::train::{AaeTrainer, GanTrainer, Mode, SemiSupervised, StepMetrics, TrainConfig};
use rocgan_core::Error as CoreError;

use crate::config::{Experiment, ExperimentConfig};
use crate::plot::{self, PlotKind};

/// A seed whose training produced a non-finite value.
#[derive(Debug)]
pub struct Divergence {
    pub seed: u64,
    pub message: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "seed {} diverged: {}", self.seed, self.message)
    }
}

impl std::error::Error for Divergence {}

/// Parallel seed workers, capped by `ROCGAN_LAB_THREADS` (default 1).
pub fn worker_count(seeds: usize) -> usize {
    let cap = std::env::var("ROCGAN_LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(1).max(1);
    cap.min(seeds).max(1)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write_json(&cfg.output_dir.join("resolved_config.json"), cfg)?;

    let slots: Mutex<Vec<Option<Result<Vec<MetricRow>>>>> = Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(cfg.seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let out = run_seed(cfg, seed).map_err(|e| classify(e, seed));
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let mut rows = Vec::new();
    for slot in slots.into_inner().expect("no worker panicked") {
        rows.extend(slot.expect("every seed ran")?);
    }
    rocgan_core::eval::write_rows(cfg.output_dir.join("metrics.csv"), &rows)?;
    Ok(rows)
}

fn classify(e: anyhow::Error, seed: u64) -> anyhow::Error {
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::NonFinite { .. }) => Divergence { seed, message: e.to_string() }.into(),
        _ => e.context(format!("seed {seed}")),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn row(experiment_id: &str, grid_label: &str, metric: &str, value: f64, seed: u64) -> MetricRow {
    MetricRow {
        experiment_id: experiment_id.to_string(),
        grid_label: grid_label.to_string(),
        metric: metric.to_string(),
        value,
        seed,
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Cgan => "cgan",
        Mode::Rocgan => "rocgan",
        Mode::RocganSkip => "rocgan_skip",
        Mode::Aae => "aae",
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>> {
    let dir = cfg.output_dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    match cfg.experiment {
        Experiment::Synthetic => synthetic(cfg, seed, &dir),
        Experiment::Theory => theory(cfg, seed),
        Experiment::LinearAnalogy => linear(cfg, seed),
        Experiment::ImageDenoise | Experiment::ImageInpaint | Experiment::RobustnessGrid => grid(cfg, seed, &dir),
        Experiment::Fgsm => fgsm(cfg, seed, &dir),
        Experiment::AblationLambda => ablation(cfg, seed, &dir),
        Experiment::SemiSupervised => semi(cfg, seed, &dir),
    }
}

fn synthetic(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let scfg = rocgan_core::eval::SyntheticConfig { seed, ..cfg.synthetic.clone() };
    let r = run_synthetic_experiment(&scfg)?;
    let csv_path = dir.join("synthetic_predictions.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    for k in 0..4 {
        header.extend([format!("target_{k}"), format!("baseline_{k}"), format!("ours_{k}")]);
    }
    w.write_record(&header)?;
    let (t, b, o) = (r.target.data(), r.baseline_pred.data(), r.twopathway_pred.data());
    for (i, [x, y]) in r.test_xy.iter().enumerate() {
        let mut rec = vec![x.to_string(), y.to_string()];
        for k in 0..4 {
            rec.extend([t[i * 4 + k], b[i * 4 + k], o[i * 4 + k]].iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    plot::plot(&csv_path, PlotKind::Manifold3d, &dir.join("manifold3d.svg"))?;
    r.baseline_store.save(dir.join("checkpoint").join("baseline"))?;
    r.joint_store.save(dir.join("checkpoint").join("twopathway"))?;
    let label = "manifold";
    Ok(vec![
        row("synthetic", label, "l1_baseline", r.l1_baseline, seed),
        row("synthetic", label, "l1_twopathway", r.l1_twopathway, seed),
        row("synthetic", label, "ratio", r.ratio(), seed),
        row("synthetic", label, "iterations_baseline", r.baseline.iterations as f64, seed),
        row("synthetic", label, "iterations_autoencoder", r.autoencoder.iterations as f64, seed),
        row("synthetic", label, "iterations_twopathway", r.joint.iterations as f64, seed),
    ])
}

fn theory(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>> {
    let t = &cfg.theory;
    let report = verify_propositions(t.trials, t.outcomes, &mut seeded(seed, 0))?;
    let equal = DiscreteJointDist::new(t.fixture.clone(), t.fixture.clone())?;
    let asym = DiscreteJointDist::new(vec![0.8, 0.2], vec![0.2, 0.8])?;
    let value = |d: &DiscreteJointDist| gan_value(d, &optimal_discriminator_filled(d));
    Ok(vec![
        row("theory", "random", "max_grid_gap", report.max_grid_gap, seed),
        row("theory", "random", "max_identity_gap", report.max_identity_gap, seed),
        row("theory", "equal", "value_at_dstar", value(&equal)?, seed),
        row("theory", "equal", "jsd", jsd(&equal.p_d, &equal.p_g)?, seed),
        row("theory", "asymmetric", "value_at_dstar", value(&asym)?, seed),
        row("theory", "asymmetric", "jsd", jsd(&asym.p_d, &asym.p_g)?, seed),
    ])
}

fn linear(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>> {
    let l = &cfg.linear_analogy;
    let all = gen_procedural_images(l.train_count + l.probe_count, l.side, seed)?;
    let train = all.subset(0..l.train_count);
    let probes = all.subset(l.train_count..l.train_count + l.probe_count);
    let r = linear_analogy_demo(&train, &probes, PcaDim::Variance(l.variance), seed)?;
    let label = format!("downscale4_side{}", l.side);
    Ok(vec![
        row("linear_analogy", &label, "pca_dim", r.pca_dim as f64, seed),
        row("linear_analogy", &label, "explained_variance", r.explained_variance, seed),
        row("linear_analogy", &label, "d_ambient", r.d_ambient, seed),
        row("linear_analogy", &label, "d_subspace", r.d_subspace, seed),
        row("linear_analogy", &label, "idempotence_error", r.idempotence_error, seed),
        row("linear_analogy", &label, "decoder_residual", r.decoder_residual, seed),
    ])
}

/// A trained image model of either kind.
enum Trained {
    Gan(Box<GanTrainer>),
    Aae(Box<AaeTrainer>),
}

impl Restorer for Trained {
    fn forward(&self, s: &Tensor) -> rocgan_core::Result<Tensor> {
        match self {
            Trained::Gan(t) => t.forward(s),
            Trained::Aae(t) => t.forward(s),
        }
    }
}

fn train_config(cfg: &ExperimentConfig, mode: Mode, seed: u64, weights: Option<LossWeights>) -> Result<TrainConfig> {
    let t = &cfg.train;
    let corruption = cfg.training_corruption().map_err(anyhow::Error::msg)?;
    Ok(TrainConfig {
        learning_rate: t.learning_rate,
        adam_beta1: t.adam_beta1,
        adam_beta2: t.adam_beta2,
        adam_eps: t.adam_eps,
        loss_weights: weights.or(t.loss_weights),
        corruption: CorruptionSpec { seed, ..corruption },
        minimax_generator: t.minimax_generator,
        grad_clip: t.grad_clip,
        ..TrainConfig::new(mode, t.batch_size, t.iterations, seed)
    })
}

const STEP_HEADER: [&str; 10] =
    ["step", "d_loss", "g_total", "adv", "content", "feature", "ae", "latent", "decov", "unlabelled"];

fn step_record(m: &StepMetrics) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let t = &m.terms;
    vec![
        m.step.to_string(),
        m.d_loss.to_string(),
        m.g_total.to_string(),
        opt(t.adv),
        opt(t.content),
        opt(t.feature),
        opt(t.ae),
        opt(t.latent),
        opt(t.decov),
        m.unlabelled.to_string(),
    ]
}

/// Trains one model into `dir`: per-step metrics, a loss curve, periodic
/// and final checkpoints.
fn train_model(
    cfg: &ExperimentConfig,
    config: TrainConfig,
    train: ImageDataset,
    unlabelled: Option<ImageDataset>,
    dir: &Path,
) -> Result<Trained> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let checkpoint = |store: &rocgan_core::nn::ParameterStore, step: usize| -> Result<()> {
        if cfg.checkpoint_every.is_some_and(|k| step.is_multiple_of(k)) {
            store.save(dir.join("checkpoints").join(format!("step_{step:06}")))?;
        }
        Ok(())
    };
    let curve_path = dir.join("loss_curve.csv");
    let mut curve = fs::File::create(&curve_path).with_context(|| format!("creating {}", curve_path.display()))?;
    let trained = if config.mode == Mode::Aae {
        writeln!(curve, "step,code_d_loss,reconstruction,prior_match")?;
        let mut t = AaeTrainer::new(config, &cfg.task.generator_spec(), train)?;
        while t.steps() < t.config.iterations {
            let m = t.step()?;
            writeln!(curve, "{},{},{},{}", m.step, m.code_d_loss, m.reconstruction, m.prior_match)?;
            checkpoint(&t.store, m.step)?;
        }
        t.store.save(dir.join("checkpoint"))?;
        Trained::Aae(Box::new(t))
    } else {
        writeln!(curve, "step,d_loss,g_total,content")?;
        let mut steps = csv::Writer::from_path(dir.join("train_metrics.csv"))?;
        steps.write_record(STEP_HEADER)?;
        let mut t = cfg.task.trainer(config, train, unlabelled)?;
        while t.steps() < t.config.iterations {
            let m = t.step()?;
            steps.write_record(step_record(&m))?;
            writeln!(curve, "{},{},{},{}", m.step, m.d_loss, m.g_total, m.terms.content.unwrap_or(f64::NAN))?;
            checkpoint(&t.store, m.step)?;
        }
        steps.flush()?;
        t.store.save(dir.join("checkpoint"))?;
        Trained::Gan(Box::new(t))
    };
    curve.flush()?;
    drop(curve);
    plot::plot(&curve_path, PlotKind::Curve, &dir.join("loss_curve.svg"))?;
    Ok(trained)
}

fn grid(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let (train, test) = cfg.task.datasets()?;
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let mdir = dir.join(mode_name(mode));
        let model = train_model(cfg, train_config(cfg, mode, seed, None)?, train.clone(), None, &mdir)?;
        let id = format!("{}/{}", cfg.experiment.name(), mode_name(mode));
        let report = eval_grid(&model, &test, &cfg.grid_specs(seed), &id, seed)?;
        for cell in &report.cells {
            let stem = format!("hist_{}", cell.label().replace('/', "_"));
            let path = mdir.join(format!("{stem}.csv"));
            cell.histogram.write_csv(&path)?;
            plot::plot(&path, PlotKind::Histogram, &mdir.join(format!("{stem}.svg")))?;
        }
        rows.extend(report.rows());
    }
    Ok(rows)
}

fn fgsm(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let (train, test) = cfg.task.datasets()?;
    let corruption = CorruptionSpec { seed, ..cfg.training_corruption().map_err(anyhow::Error::msg)? };
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let model =
            train_model(cfg, train_config(cfg, mode, seed, None)?, train.clone(), None, &dir.join(mode_name(mode)))?;
        let r = fgsm_eval(&model, &test, &corruption, cfg.fgsm.epsilon)?;
        let id = format!("fgsm/{}", mode_name(mode));
        let label = format!("eps={}", cfg.fgsm.epsilon);
        for (metric, value) in [
            ("max_abs_eta", r.max_abs_eta),
            ("loss_clean", r.loss_clean),
            ("loss_fgsm", r.loss_fgsm),
            ("loss_random", r.loss_random),
            ("ssim_clean", r.ssim_clean),
            ("ssim_fgsm", r.ssim_fgsm),
            ("ssim_random", r.ssim_random),
            ("ssim_degradation", r.degradation()),
        ] {
            rows.push(row(&id, &label, metric, value, seed));
        }
    }
    Ok(rows)
}

fn set_lambda(w: &mut LossWeights, name: &str, value: f64) {
    match name {
        "lambda_c" => w.lambda_c = value,
        "lambda_pi" => w.lambda_pi = value,
        "lambda_ae" => w.lambda_ae = value,
        "lambda_l" => w.lambda_l = value,
        "lambda_decov" => w.lambda_decov = value,
        _ => unreachable!("validated"),
    }
}

/// One SSIM row per swept value; zero weights are labelled as ablations.
fn ablation(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let (train, test) = cfg.task.datasets()?;
    let corruption = cfg.grid_specs(seed);
    let mode = cfg.modes[0];
    let mut rows = Vec::new();
    for (name, values) in &cfg.ablation {
        for &v in values {
            let mut w = cfg.train.loss_weights.unwrap_or_else(|| mode.default_weights());
            set_lambda(&mut w, name, v);
            let label = if v == 0.0 { format!("{name}=0[ablation]") } else { format!("{name}={v}") };
            let mdir = dir.join(label.replace(['=', '[', ']'], "_"));
            let model = train_model(cfg, train_config(cfg, mode, seed, Some(w))?, train.clone(), None, &mdir)?;
            let report = eval_grid(&model, &test, &corruption[..1], "ablation_lambda", seed)?;
            rows.push(row("ablation_lambda", &label, "ssim", report.cells[0].ssim, seed));
        }
    }
    Ok(rows)
}

/// Regression pathway trained on the labelled subset alone, then with the
/// unlabelled targets added to the autoencoder pathway.
fn semi(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let s = cfg.semi_supervised.as_ref().expect("validated");
    let (train, test) = cfg.task.datasets()?;
    let labelled = train.subset(0..s.labelled_count);
    let unlabelled = train.subset(s.labelled_count..s.labelled_count + s.unlabelled_count);
    let specs = cfg.grid_specs(seed);
    let mut rows = Vec::new();
    for (name, extra) in [("supervised", None), ("semi", Some(unlabelled))] {
        let mut config = train_config(cfg, cfg.modes[0], seed, None)?;
        config.semi_supervised = Some(SemiSupervised {
            labelled_count: s.labelled_count,
            unlabelled_count: if extra.is_some() { s.unlabelled_count } else { 0 },
            unlabelled_batch: s.unlabelled_batch,
        });
        let model = train_model(cfg, config, labelled.clone(), extra, &dir.join(name))?;
        let report = eval_grid(&model, &test, &specs[..1], &format!("semi_supervised/{name}"), seed)?;
        let c = &report.cells[0];
        rows.push(row(&report.experiment_id, &c.label(), "ssim", c.ssim, seed));
        rows.push(row(&report.experiment_id, &c.label(), "l1", c.l1, seed));
    }
    Ok(rows)
}
