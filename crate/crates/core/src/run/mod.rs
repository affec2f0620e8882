//! Experiment plumbing shared by the command line and the tests: run
//! configuration, training and scoring loops, sweeps, ablations and plots.

mod config;
mod experiment;
pub mod plot;

pub use config::{DataConfig, RunConfig};
pub use experiment::{
    ablate, ablation_csv, load_or_make, score_clips, sweep, sweep_csv, train_new, transcribe_all, AblationRow,
    SweepRow, ABLATION_CSV_HEADER, SWEEP_CSV_HEADER,
};
