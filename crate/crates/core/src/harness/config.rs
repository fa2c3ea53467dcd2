//! Experiment description files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::AttackConfig;
use crate::datasets::SineImageSpec;
use crate::error::{Error, Result};
use crate::nn::model::{BlockSpec, Downsampling, FirstLayerSpec, ModelSpec, Task};
use crate::nn::train::TrainConfig;
use crate::spectral::{DEFAULT_ANALYSIS_GRID, DEFAULT_PASSBAND_DB};
use crate::window::{WindowFamily, WindowSpec};

/// Environment variable naming the directory relative output dirs live in.
pub const OUTPUT_ROOT_ENV: &str = "WINCONV_OUTPUT_ROOT";
/// Environment variable naming the CIFAR-10 binary batch directory.
pub const CIFAR_DIR_ENV: &str = "WINCONV_CIFAR10_DIR";
pub const DEFAULT_CIFAR_DIR: &str = "data/cifar-10-batches-bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Sine-wave images with their DFT magnitudes as regression targets.
    SineFft {
        n_train: usize,
        n_val: usize,
        #[serde(default)]
        image: SineImageSpec,
        /// Fixed generator seed; when absent each run seed gets its own data.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// CIFAR-10 binary batches; the directory falls back to
    /// `$WINCONV_CIFAR10_DIR`, then `data/cifar-10-batches-bin`.
    Cifar10 {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        n_train: Option<usize>,
        #[serde(default)]
        n_val: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        val_images: PathBuf,
        val_labels: PathBuf,
        #[serde(default)]
        n_train: Option<usize>,
        #[serde(default)]
        n_val: Option<usize>,
    },
    /// A directory written by `gen-data`.
    Saved { dir: PathBuf },
}

/// Which conv layers get a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPlacement {
    #[default]
    None,
    First,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstLayerConfig {
    pub k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Required for classifiers; regression models always have `H * W`.
    #[serde(default)]
    pub out_channels: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub k: usize,
    pub out_channels: usize,
}

fn one() -> usize {
    1
}

fn hamming() -> WindowFamily {
    WindowFamily::Hamming
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub first_layer: FirstLayerConfig,
    #[serde(default)]
    pub block: Option<BlockConfig>,
    /// Total number of conv layers, first layer included.
    #[serde(default = "one")]
    pub depth: usize,
    #[serde(default = "no_downsampling")]
    pub downsampling: Downsampling,
    #[serde(default)]
    pub window: WindowPlacement,
    #[serde(default = "hamming")]
    pub window_family: WindowFamily,
}

fn no_downsampling() -> Downsampling {
    Downsampling::None
}

/// Named overrides of the shared model section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub window: Option<WindowPlacement>,
    /// Kernel size of every layer.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub first_k: Option<usize>,
    #[serde(default)]
    pub block_k: Option<usize>,
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub first_out_channels: Option<usize>,
    #[serde(default)]
    pub block_out_channels: Option<usize>,
}

impl Variant {
    pub fn named(name: &str) -> Self {
        Variant {
            name: name.into(),
            window: None,
            k: None,
            first_k: None,
            block_k: None,
            depth: None,
            first_out_channels: None,
            block_out_channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub spectra: bool,
    pub grid: usize,
    pub threshold_db: f64,
    /// Keep every kernel's leakage report, not only layer means.
    pub per_kernel: bool,
    pub ortho: bool,
    /// Input shape for the orthogonality matrices; defaults to the model's.
    pub ortho_input: Option<[usize; 3]>,
    /// Layers whose kernels are written as PGM images.
    pub dump_kernels: Vec<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            spectra: false,
            grid: DEFAULT_ANALYSIS_GRID,
            threshold_db: DEFAULT_PASSBAND_DB,
            per_kernel: false,
            ortho: false,
            ortho_input: None,
            dump_kernels: Vec::new(),
        }
    }
}

/// Multipliers for desk-scale runs. `channels` scales classifier widths,
/// `samples` scales dataset sizes; both round to the nearest integer >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scale {
    pub channels: f64,
    pub samples: f64,
}

impl Default for Scale {
    fn default() -> Self {
        Scale {
            channels: 1.0,
            samples: 1.0,
        }
    }
}

impl Scale {
    fn apply(factor: f64, n: usize) -> usize {
        ((n as f64 * factor).round() as usize).max(1)
    }

    pub fn channels(&self, n: usize) -> usize {
        Self::apply(self.channels, n)
    }

    pub fn samples(&self, n: usize) -> usize {
        Self::apply(self.samples, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    /// Empty means a single variant called `default`.
    #[serde(default)]
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    /// Validation samples used by the attacks; all when absent.
    #[serde(default)]
    pub attack_samples: Option<usize>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "yes")]
    pub save_checkpoints: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn variants(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            vec![Variant::named("default")]
        } else {
            self.variants.clone()
        }
    }

    /// Run directory: `output_dir`, below `$WINCONV_OUTPUT_ROOT` when relative.
    pub fn run_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seed {s} is listed twice")));
            }
        }
        let mut names = std::collections::HashSet::new();
        for v in &self.variants {
            let ok = !v.name.is_empty()
                && v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::Config(format!(
                    "variant name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                    v.name
                )));
            }
            if !names.insert(&v.name) {
                return Err(Error::Config(format!("variant {} is listed twice", v.name)));
            }
        }
        if !(self.scale.channels > 0.0 && self.scale.samples > 0.0) {
            return Err(Error::Config("scale factors must be positive".into()));
        }
        self.train.validate()?;
        match (self.task, &self.dataset) {
            (Task::FftRegression, DatasetConfig::SineFft { .. } | DatasetConfig::Saved { .. }) => {}
            (Task::Classification, DatasetConfig::SineFft { .. }) => {
                return Err(Error::Config("sine_fft data has regression targets; use task fft_regression".into()))
            }
            (Task::FftRegression, _) => {
                return Err(Error::Config("fft_regression needs a sine_fft or saved dataset".into()))
            }
            _ => {}
        }
        if let DatasetConfig::SineFft { n_train, n_val, image, .. } = &self.dataset {
            image.validate()?;
            if *n_train == 0 || *n_val == 0 {
                return Err(Error::Config("dataset sizes must be at least 1".into()));
            }
        }
        if self.task == Task::FftRegression && !self.attacks.is_empty() {
            return Err(Error::Config("attacks need a classification task".into()));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        if self.analysis.grid == 0 || !(self.analysis.threshold_db < 0.0) {
            return Err(Error::Config("analysis grid must be positive and threshold_db below 0".into()));
        }
        Ok(())
    }

    /// Concrete model of `variant` for images of `input_shape` and
    /// `num_outputs` outputs.
    pub fn model_spec(&self, variant: &Variant, input_shape: [usize; 3], num_outputs: usize) -> Result<ModelSpec> {
        let m = &self.model;
        let placement = variant.window.unwrap_or(m.window);
        let depth = variant.depth.unwrap_or(m.depth);
        let first_k = variant.first_k.or(variant.k).unwrap_or(m.first_layer.k);
        let window = |k: usize, first: bool| match (placement, first) {
            (WindowPlacement::All, _) | (WindowPlacement::First, true) => Some(WindowSpec::square(m.window_family, k)),
            _ => None,
        };
        if depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        let spec = match self.task {
            Task::FftRegression => {
                let [_, h, w] = input_shape;
                if depth != 1 || m.downsampling != Downsampling::None || m.first_layer.stride != 1 {
                    return Err(Error::Config(
                        "fft_regression models are a single stride-1 conv without downsampling".into(),
                    ));
                }
                if let Some(c) = variant.first_out_channels.or(m.first_layer.out_channels) {
                    if c != h * w {
                        return Err(Error::Config(format!(
                            "fft_regression needs {} output channels, config says {c}",
                            h * w
                        )));
                    }
                }
                if h != w {
                    return Err(Error::Config("fft_regression needs square images".into()));
                }
                let mut spec = ModelSpec::fft_regression(h, first_k, window(first_k, true));
                spec.input_shape = input_shape;
                spec
            }
            Task::Classification => {
                let first_c = variant
                    .first_out_channels
                    .or(m.first_layer.out_channels)
                    .ok_or_else(|| Error::Config("classifiers need first_layer.out_channels".into()))?;
                let blocks = if depth > 1 {
                    let b = m
                        .block
                        .ok_or_else(|| Error::Config(format!("depth {depth} needs a `block` section")))?;
                    let k = variant.block_k.or(variant.k).unwrap_or(b.k);
                    let c = self.scale.channels(variant.block_out_channels.unwrap_or(b.out_channels));
                    vec![
                        BlockSpec {
                            k,
                            out_channels: c,
                            window: window(k, false),
                        };
                        depth - 1
                    ]
                } else {
                    Vec::new()
                };
                ModelSpec {
                    task: Task::Classification,
                    input_shape,
                    first_layer: FirstLayerSpec {
                        k: first_k,
                        stride: m.first_layer.stride,
                        out_channels: self.scale.channels(first_c),
                        window: window(first_k, true),
                    },
                    blocks,
                    downsampling: m.downsampling,
                    num_outputs,
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classifier_json() -> String {
        r#"{
            "name": "t",
            "task": "classification",
            "dataset": {"kind": "cifar10", "n_train": 100},
            "model": {
                "first_layer": {"k": 7, "stride": 2, "out_channels": 32},
                "block": {"k": 3, "out_channels": 128},
                "depth": 4,
                "downsampling": "strided_conv"
            },
            "variants": [
                {"name": "baseline"},
                {"name": "hamming_first", "window": "first", "block_k": 7},
                {"name": "hamming_all", "window": "all", "k": 5}
            ],
            "train": {"epochs": 1, "batch_size": 32, "initial_lr": 0.01},
            "output_dir": "out",
            "seeds": [0, 1]
        }"#
        .into()
    }

    #[test]
    fn placements() {
        let cfg = ExperimentConfig::from_json(&classifier_json()).unwrap();
        let vs = cfg.variants();
        let shape = [3, 32, 32];
        let base = cfg.model_spec(&vs[0], shape, 10).unwrap();
        assert_eq!(base.blocks.len(), 3);
        assert!(base.first_layer.window.is_none() && base.blocks.iter().all(|b| b.window.is_none()));
        let first = cfg.model_spec(&vs[1], shape, 10).unwrap();
        assert_eq!(first.first_layer.window, Some(WindowSpec::square(WindowFamily::Hamming, 7)));
        assert!(first.blocks.iter().all(|b| b.window.is_none() && b.k == 7));
        let all = cfg.model_spec(&vs[2], shape, 10).unwrap();
        assert_eq!(all.first_layer.k, 5);
        assert!(all.blocks.iter().all(|b| b.window == Some(WindowSpec::square(WindowFamily::Hamming, 5))));
    }

    #[test]
    fn scale_and_rejections() {
        let mut cfg = ExperimentConfig::from_json(&classifier_json()).unwrap();
        cfg.scale.channels = 0.25;
        let s = cfg.model_spec(&cfg.variants()[0], [3, 32, 32], 10).unwrap();
        assert_eq!((s.first_layer.out_channels, s.blocks[0].out_channels), (8, 32));

        let unknown = classifier_json().replace("\"seeds\"", "\"colour\": 1, \"seeds\"");
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Config(_))));
        let nested = classifier_json().replace("\"depth\": 4", "\"depth\": 4, \"dropout\": 0.5");
        assert!(ExperimentConfig::from_json(&nested).is_err());
        let no_seeds = classifier_json().replace("[0, 1]", "[]");
        assert!(ExperimentConfig::from_json(&no_seeds).is_err());
        let dup = classifier_json().replace("\"hamming_all\"", "\"baseline\"");
        assert!(ExperimentConfig::from_json(&dup).is_err());
        let dataset = classifier_json().replace("\"n_train\": 100", "\"n_train\": 100, \"shuffle\": 1");
        assert!(ExperimentConfig::from_json(&dataset).is_err());
    }

    #[test]
    fn fft_model_and_hash() {
        let text = r#"{
            "name": "f", "task": "fft_regression",
            "dataset": {"kind": "sine_fft", "n_train": 4, "n_val": 2, "image": {"size": 8}},
            "model": {"first_layer": {"k": 5}},
            "variants": [{"name": "rect"}, {"name": "ham", "window": "first", "k": 9}],
            "train": {"epochs": 1, "batch_size": 2, "initial_lr": 0.001},
            "output_dir": "o", "seeds": [3]
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let s = cfg.model_spec(&cfg.variants()[1], [1, 8, 8], 64).unwrap();
        assert_eq!(s.first_layer.out_channels, 64);
        assert_eq!(s.first_layer.window, Some(WindowSpec::square(WindowFamily::Hamming, 9)));
        assert_eq!(cfg.hash().len(), 64);
        assert_eq!(cfg.hash(), ExperimentConfig::from_json(text).unwrap().hash());
        let mut other = cfg.clone();
        other.seeds = vec![4];
        assert_ne!(cfg.hash(), other.hash());
        let deep = text.replace("\"k\": 5}", "\"k\": 5}, \"depth\": 2");
        let cfg = ExperimentConfig::from_json(&deep).unwrap();
        assert!(cfg.model_spec(&cfg.variants()[0], [1, 8, 8], 64).is_err());
    }
}
