use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use winconv::error::{Error, Result};
use winconv::harness::artifacts::{dump_kernels, dump_window, kernel_spectra};
use winconv::harness::config::ExperimentConfig;
use winconv::harness::run::{analyze_run, attack_run, generate_data, run_checkpoints, run_experiment, RunReport};
use winconv::harness::compare_runs;
use winconv::nn::load_checkpoint;
use winconv::ortho::ortho_report;
use winconv::rng::Rng;
use winconv::spectral::{DEFAULT_ANALYSIS_GRID, DEFAULT_PASSBAND_DB};
use winconv::window::{WindowFamily, WindowSpec};

#[derive(Parser)]
#[command(name = "winconv", version, about = "Windowed convolution experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Replace the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the dataset of a config (first seed) to `<run dir>/data`.
    GenData {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant and seed of a config.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Kernel leakage of a checkpoint, or of every checkpoint of a run.
    AnalyzeSpectrum {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ANALYSIS_GRID)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_PASSBAND_DB, allow_hyphen_values = true)]
        threshold_db: f64,
        /// Output file for `--checkpoint`; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Window coefficients and frequency response.
    DumpWindow {
        #[arg(long, value_enum, default_value = "hamming")]
        family: Family,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_ANALYSIS_GRID)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_PASSBAND_DB, allow_hyphen_values = true)]
        threshold_db: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Orthogonality deviation per conv layer.
    AnalyzeOrtho {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input shape `C,H,W`; the model's own by default.
        #[arg(long, value_delimiter = ',')]
        input: Option<Vec<usize>>,
        /// Seed of the chance-level baseline.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config's attacks on the checkpoints of a finished run.
    Attack {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Number of validation samples to attack.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Metric deltas between two `report.json` files, as CSV.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel slices of one layer as PGM images.
    DumpKernels {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        layer: String,
        #[arg(long, default_value_t = DEFAULT_ANALYSIS_GRID)]
        grid: usize,
        /// Required with `--checkpoint`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Family {
    Rectangular,
    Hamming,
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(d).map_err(|e| Error::Io { path: d.into(), source: e })?;
            }
            fs::write(p, text).map_err(|e| Error::Io { path: p.into(), source: e })
        }
        None => {
            say(text);
            Ok(())
        }
    }
}

/// Prints a line, ignoring a closed pipe.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn plain_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { cfg, out } => {
            let cfg = cfg.load()?;
            let dir = out.unwrap_or_else(|| cfg.run_dir().join("data"));
            generate_data(&cfg, cfg.seeds[0], &dir)?;
            eprintln!("wrote {}", dir.display());
        }
        Cmd::Train { cfg, epochs } => {
            let mut cfg = cfg.load()?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let report = run_experiment(&cfg)?;
            for v in &report.variants {
                let std = v.final_std.map(|s| format!(" +- {s:.6e}")).unwrap_or_default();
                say(&format!("{} {}: {:.6e}{std}", v.name, report.metric, v.final_mean));
            }
            eprintln!("report: {}", cfg.run_dir().join("report.json").display());
        }
        Cmd::AnalyzeSpectrum { config, checkpoint, grid, threshold_db, out } => match (config, checkpoint) {
            (Some(path), _) => {
                let mut cfg = plain_config(&path)?;
                cfg.analysis.spectra = true;
                cfg.analysis.ortho = false;
                cfg.analysis.dump_kernels.clear();
                cfg.analysis.grid = grid;
                cfg.analysis.threshold_db = threshold_db;
                for f in analyze_run(&cfg)? {
                    say(&f);
                }
            }
            (None, Some(ck)) => {
                let (model, _) = load_checkpoint(&ck)?;
                write_out(out.as_deref(), &json(&kernel_spectra(&model, grid, threshold_db, false)?))?;
            }
            (None, None) => unreachable!("clap requires one"),
        },
        Cmd::DumpWindow { family, k, grid, threshold_db, out } => {
            let family = match family {
                Family::Rectangular => WindowFamily::Rectangular,
                Family::Hamming => WindowFamily::Hamming,
            };
            let d = dump_window(WindowSpec::square(family, k), grid, threshold_db, &out)?;
            say(&json(&d.leakage));
        }
        Cmd::AnalyzeOrtho { config, checkpoint, input, seed, out } => {
            let shape = match input.as_deref() {
                None => None,
                Some(&[c, h, w]) => Some([c, h, w]),
                Some(_) => return Err(Error::Config("--input takes C,H,W".into())),
            };
            match (config, checkpoint) {
                (Some(path), _) => {
                    let mut cfg = plain_config(&path)?;
                    cfg.analysis.spectra = false;
                    cfg.analysis.ortho = true;
                    cfg.analysis.dump_kernels.clear();
                    if shape.is_some() {
                        cfg.analysis.ortho_input = shape;
                    }
                    for f in analyze_run(&cfg)? {
                        say(&f);
                    }
                }
                (None, Some(ck)) => {
                    let (model, _) = load_checkpoint(&ck)?;
                    let shape = shape.unwrap_or(model.spec().input_shape);
                    let r = ortho_report(&model, shape, &mut Rng::new(seed))?;
                    write_out(out.as_deref(), &json(&r))?;
                }
                (None, None) => unreachable!("clap requires one"),
            }
        }
        Cmd::Attack { cfg, samples } => {
            let mut cfg = cfg.load()?;
            if samples.is_some() {
                cfg.attack_samples = samples;
            }
            for (variant, seed, reports) in attack_run(&cfg)? {
                for r in reports {
                    say(&format!(
                        "{variant} seed {seed} {:?}: clean {:.4} attacked {:.4}",
                        r.kind, r.clean_accuracy, r.attacked_accuracy
                    ));
                }
            }
        }
        Cmd::Compare { a, b, out } => {
            let c = compare_runs(&RunReport::load(&a)?, &RunReport::load(&b)?)?;
            write_out(out.as_deref(), c.to_csv().trim_end())?;
        }
        Cmd::DumpKernels { config, checkpoint, layer, grid, out } => match (config, checkpoint) {
            (Some(path), _) => {
                let cfg = plain_config(&path)?;
                for (v, seed, dir) in run_checkpoints(&cfg)? {
                    let (model, _) = load_checkpoint(&dir)?;
                    let target = dir.parent().expect("seed dir").join(format!("kernels_{layer}"));
                    let d = dump_kernels(&model, &layer, grid, &target)?;
                    say(&format!("{} seed {seed}: {} kernels in {}", v.name, d.kernel_files.len(), target.display()));
                }
            }
            (None, Some(ck)) => {
                let out = out.ok_or_else(|| Error::Config("--out is required with --checkpoint".into()))?;
                let (model, _) = load_checkpoint(&ck)?;
                let d = dump_kernels(&model, &layer, grid, &out)?;
                say(&format!("{} kernels in {}", d.kernel_files.len(), out.display()));
            }
            (None, None) => unreachable!("clap requires one"),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("winconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
