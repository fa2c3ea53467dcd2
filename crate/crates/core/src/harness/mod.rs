//! Declarative experiments and their output files.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod run;

pub use artifacts::{dump_kernels, dump_window, kernel_spectra, write_pgm};
pub use compare::{compare_runs, Comparison};
pub use config::{ExperimentConfig, Variant, WindowPlacement};
pub use run::{run_experiment, RunReport};
