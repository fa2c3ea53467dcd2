//! Executes an experiment config: data, training, analysis, attacks, files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{evaluate_robustness, RobustnessReport};
use crate::datasets::{
    gen_fft_dataset, load_cifar10_dir, load_dataset, load_idx, save_dataset, LabeledDataset, Split, Targets,
};
use crate::error::{Error, Result};
use crate::harness::artifacts::{dump_kernels, kernel_spectra, metrics_csv, LayerSpectra};
use crate::harness::config::{DatasetConfig, ExperimentConfig, Variant, CIFAR_DIR_ENV, DEFAULT_CIFAR_DIR};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use crate::nn::model::{model_init, Model, Task};
use crate::nn::train::{train, EpochRecord, TrainConfig, INIT_STREAM};
use crate::ortho::{ortho_report, LayerOrtho};
use crate::rng::Rng;

/// Substream of a run seed that generates per-seed synthetic data.
pub const DATASET_STREAM: u64 = 2;
/// Substream of a run seed that initializes the chance-level orthogonality
/// baseline.
pub const ORTHO_STREAM: u64 = 3;

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub final_metric: f64,
    pub optimizer_steps: u64,
    #[serde(default)]
    pub spectra: Option<Vec<LayerSpectra>>,
    #[serde(default)]
    pub ortho: Option<Vec<LayerOrtho>>,
    #[serde(default)]
    pub attacks: Vec<RobustnessReport>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAggregate {
    pub epoch: usize,
    pub mean: f64,
    /// Sample standard deviation, only with two or more seeds.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub name: String,
    pub spec: crate::nn::model::ModelSpec,
    pub seeds: Vec<SeedRun>,
    pub final_mean: f64,
    pub final_std: Option<f64>,
    pub per_epoch: Vec<EpochAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub task: Task,
    /// `val_mse` or `val_accuracy`.
    pub metric: String,
    pub variants: Vec<VariantRun>,
    pub wall_clock_s: f64,
    /// Every file the run wrote, relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn variant(&self, name: &str) -> Option<&VariantRun> {
        self.variants.iter().find(|v| v.name == name)
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::FftRegression => "val_mse",
        Task::Classification => "val_accuracy",
    }
}

/// Mean and sample standard deviation (`None` below two values).
pub fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

fn trim(ds: LabeledDataset, n: Option<usize>, scale: &crate::harness::config::Scale) -> Result<LabeledDataset> {
    match n {
        Some(n) => {
            let n = scale.samples(n);
            if n > ds.len() {
                return Err(Error::Data(format!("asked for {n} samples, the split has {}", ds.len())));
            }
            ds.head(n)
        }
        None if scale.samples != 1.0 => {
            let n = scale.samples(ds.len()).min(ds.len());
            ds.head(n)
        }
        None => Ok(ds),
    }
}

/// Train and validation data of a config for one run seed.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let scale = &cfg.scale;
    match &cfg.dataset {
        DatasetConfig::SineFft { n_train, n_val, image, seed: fixed } => {
            let mut rng = match fixed {
                Some(s) => Rng::new(*s),
                None => Rng::substream(seed, DATASET_STREAM),
            };
            gen_fft_dataset(&mut rng, scale.samples(*n_train), scale.samples(*n_val), image)
        }
        DatasetConfig::Cifar10 { dir, n_train, n_val } => {
            let dir = dir.clone().unwrap_or_else(|| {
                std::env::var_os(CIFAR_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_CIFAR_DIR.into())
            });
            let (tr, va) = load_cifar10_dir(&dir)?;
            Ok((trim(tr, *n_train, scale)?, trim(va, *n_val, scale)?))
        }
        DatasetConfig::Idx { train_images, train_labels, val_images, val_labels, n_train, n_val } => {
            let tr = load_idx(train_images, train_labels)?;
            let va = load_idx(val_images, val_labels)?;
            let va = LabeledDataset::new(va.images().clone(), va.targets().clone(), Split::Validation)?;
            Ok((trim(tr, *n_train, scale)?, trim(va, *n_val, scale)?))
        }
        DatasetConfig::Saved { dir } => Ok((load_dataset(dir, Split::Train)?, load_dataset(dir, Split::Validation)?)),
    }
}

/// Writes the data of `seed` below `dir` (`gen-data`).
pub fn generate_data(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let (tr, va) = load_data(cfg, seed)?;
    save_dataset(&tr, dir)?;
    save_dataset(&va, dir)
}

fn outputs_of(ds: &LabeledDataset) -> usize {
    match ds.targets() {
        Targets::Labels { num_classes, .. } => *num_classes,
        Targets::Vectors(t) => t.shape()[1],
    }
}

struct Writer {
    root: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(rel.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.text(rel, &serde_json::to_string_pretty(value).expect("report types serialize"))
    }
}

fn seed_dir(variant: &str, seed: u64) -> String {
    format!("{variant}/seed{seed}")
}

/// Spectra, orthogonality and kernel dumps of a trained model.
fn analyze(
    cfg: &ExperimentConfig,
    model: &Model,
    seed: u64,
    rel: &str,
    w: &mut Writer,
) -> Result<(Option<Vec<LayerSpectra>>, Option<Vec<LayerOrtho>>)> {
    let a = &cfg.analysis;
    let spectra = if a.spectra {
        let s = kernel_spectra(model, a.grid, a.threshold_db, a.per_kernel)?;
        w.json(&format!("{rel}/spectra.json"), &s)?;
        Some(s)
    } else {
        None
    };
    let ortho = if a.ortho {
        let shape = a.ortho_input.unwrap_or(model.spec().input_shape);
        let o = ortho_report(model, shape, &mut Rng::substream(seed, ORTHO_STREAM)).map_err(|e| match e {
            Error::Size(msg) => Error::Config(format!("orthogonality budget exceeded ({msg}); set a smaller analysis.ortho_input")),
            other => other,
        })?;
        w.json(&format!("{rel}/ortho.json"), &o)?;
        Some(o)
    } else {
        None
    };
    for layer in &a.dump_kernels {
        let sub = format!("{rel}/kernels_{layer}");
        let d = dump_kernels(model, layer, a.grid, &w.root.join(&sub))?;
        w.files.extend(d.kernel_files.iter().chain(&d.spectrum_files).map(|f| format!("{sub}/{f}")));
    }
    Ok((spectra, ortho))
}

fn attack(cfg: &ExperimentConfig, model: &Model, val: &LabeledDataset, rel: &str, w: &mut Writer) -> Result<Vec<RobustnessReport>> {
    let ds = match cfg.attack_samples {
        Some(n) => val.head(n.min(val.len()))?,
        None => val.clone(),
    };
    let mut out = Vec::new();
    for (i, a) in cfg.attacks.iter().enumerate() {
        let r = evaluate_robustness(model, &ds, a)?;
        let kind = serde_json::to_value(a.kind).expect("enum serializes");
        w.json(&format!("{rel}/attack{i}_{}.json", kind.as_str().unwrap_or("attack")), &r)?;
        out.push(r);
    }
    Ok(out)
}

fn aggregate(name: &str, spec: crate::nn::model::ModelSpec, seeds: Vec<SeedRun>) -> VariantRun {
    let finals: Vec<f64> = seeds.iter().map(|s| s.final_metric).collect();
    let (final_mean, final_std) = mean_std(&finals);
    let epochs = seeds.iter().map(|s| s.records.len()).min().unwrap_or(0);
    let per_epoch = (0..epochs)
        .map(|e| {
            let v: Vec<f64> = seeds.iter().map(|s| s.records[e].val_metric).collect();
            let (mean, std) = mean_std(&v);
            EpochAggregate { epoch: e, mean, std }
        })
        .collect();
    VariantRun {
        name: name.into(),
        spec,
        seeds,
        final_mean,
        final_std,
        per_epoch,
    }
}

fn aggregate_csv(v: &VariantRun) -> String {
    let mut s = String::from("epoch,mean_val_metric,std_val_metric\n");
    for a in &v.per_epoch {
        let std = a.std.map(|x| x.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{std}\n", a.epoch, a.mean));
    }
    s
}

/// Runs every variant for every seed and writes the run directory:
///
/// - `<variant>/seed<s>/metrics.csv` with `epoch,train_loss,val_metric,lr`
/// - `<variant>/seed<s>/checkpoint/` when `save_checkpoints` is set
/// - `<variant>/seed<s>/{spectra,ortho,attack<i>_<kind>}.json` as configured
/// - `<variant>/aggregate.csv`, `summary.csv` and `report.json`
///
/// Model initialization uses `Rng::substream(seed, INIT_STREAM)` and the
/// training seed is the run seed, so two variants with the same seed see the
/// same data order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut w = Writer {
        root: cfg.run_dir(),
        files: Vec::new(),
    };
    fs::create_dir_all(&w.root).map_err(|e| Error::io(&w.root, e))?;
    let variants = cfg.variants();
    let mut runs: Vec<Vec<SeedRun>> = vec![Vec::new(); variants.len()];
    let mut specs = Vec::new();
    for &seed in &cfg.seeds {
        let (train_ds, val_ds) = load_data(cfg, seed)?;
        for (vi, variant) in variants.iter().enumerate() {
            let t0 = Instant::now();
            let spec = cfg.model_spec(variant, train_ds.image_shape(), outputs_of(&train_ds))?;
            if specs.len() <= vi {
                specs.push(spec.clone());
            }
            log::info!("{}: variant {} seed {seed}: {} parameters", cfg.name, variant.name, spec.param_count());
            let mut model = model_init(&spec, &mut Rng::substream(seed, INIT_STREAM))?;
            let tcfg = TrainConfig { seed, ..cfg.train.clone() };
            let history = train(&mut model, &train_ds, &val_ds, &tcfg)?;
            let rel = seed_dir(&variant.name, seed);
            w.text(&format!("{rel}/metrics.csv"), &metrics_csv(&history.records))?;
            if cfg.save_checkpoints {
                let state = TrainState {
                    epoch: history.records.len(),
                    optimizer: Some(tcfg.optimizer),
                    optimizer_steps: history.optimizer_steps,
                };
                let files = save_checkpoint(&model, state, &w.root.join(&rel).join("checkpoint"))?;
                w.files.extend(files.into_iter().map(|f| format!("{rel}/checkpoint/{f}")));
            }
            let (spectra, ortho) = analyze(cfg, &model, seed, &rel, &mut w)?;
            let attacks = attack(cfg, &model, &val_ds, &rel, &mut w)?;
            runs[vi].push(SeedRun {
                seed,
                final_metric: history.final_metric().unwrap_or(f64::NAN),
                records: history.records,
                optimizer_steps: history.optimizer_steps,
                spectra,
                ortho,
                attacks,
                wall_clock_s: t0.elapsed().as_secs_f64(),
            });
        }
    }
    let variants: Vec<VariantRun> = variants
        .iter()
        .zip(runs)
        .zip(specs)
        .map(|((v, seeds), spec)| aggregate(&v.name, spec, seeds))
        .collect();
    let mut summary = String::from("variant,seed,final_train_loss,final_val_metric\n");
    for v in &variants {
        w.text(&format!("{}/aggregate.csv", v.name), &aggregate_csv(v))?;
        for s in &v.seeds {
            let loss = s.records.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
            summary.push_str(&format!("{},{},{loss},{}\n", v.name, s.seed, s.final_metric));
        }
    }
    w.text(SUMMARY_FILE, &summary)?;
    w.files.push(REPORT_FILE.into());
    let report = RunReport {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        task: cfg.task,
        metric: metric_name(cfg.task).into(),
        variants,
        wall_clock_s: start.elapsed().as_secs_f64(),
        artifacts: w.files.clone(),
    };
    let path = w.root.join(REPORT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Checkpoints of a finished run as `(variant, seed, directory)`.
pub fn run_checkpoints(cfg: &ExperimentConfig) -> Result<Vec<(Variant, u64, PathBuf)>> {
    let root = cfg.run_dir();
    let mut out = Vec::new();
    for v in cfg.variants() {
        for &s in &cfg.seeds {
            let dir = root.join(seed_dir(&v.name, s)).join("checkpoint");
            if !dir.is_dir() {
                return Err(Error::Data(format!(
                    "no checkpoint at {}; run `winconv train` with this config first",
                    dir.display()
                )));
            }
            out.push((v.clone(), s, dir));
        }
    }
    Ok(out)
}

/// Re-runs the analysis stages on the checkpoints of a finished run and
/// returns the files written.
pub fn analyze_run(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut w = Writer {
        root: cfg.run_dir(),
        files: Vec::new(),
    };
    for (v, seed, dir) in run_checkpoints(cfg)? {
        let (model, _) = load_checkpoint(&dir)?;
        analyze(cfg, &model, seed, &seed_dir(&v.name, seed), &mut w)?;
    }
    Ok(w.files)
}

/// Runs the configured attacks on the checkpoints of a finished run.
pub fn attack_run(cfg: &ExperimentConfig) -> Result<Vec<(String, u64, Vec<RobustnessReport>)>> {
    if cfg.attacks.is_empty() {
        return Err(Error::Config("the config lists no attacks".into()));
    }
    let mut w = Writer {
        root: cfg.run_dir(),
        files: Vec::new(),
    };
    let mut out = Vec::new();
    for (v, seed, dir) in run_checkpoints(cfg)? {
        let (_, val) = load_data(cfg, seed)?;
        let (model, _) = load_checkpoint(&dir)?;
        out.push((v.name.clone(), seed, attack(cfg, &model, &val, &seed_dir(&v.name, seed), &mut w)?));
    }
    Ok(out)
}
