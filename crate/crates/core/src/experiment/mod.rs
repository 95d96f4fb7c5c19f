//! End-to-end runs driven by an INI config: data generation, training,
//! baselines, scoring and the reports written to an output directory.

mod config;
mod run;
mod selftest;

pub use config::{
    DataSection, EvaluationSection, ExperimentConfig, ExperimentSection, Method, NetworkSection, SchemeSection,
    TrainingSection, SEED_ENV,
};
pub use run::{
    build_system, census_through_sample, config_frame_report, load_trained, make_splits, run_dir, run_experiment,
    run_grappa, run_raki, run_sweep, save_trained, score_system, ExperimentSummary, GeometrySummary, MaskedPatterns,
    RunRow, Splits,
};
pub use selftest::{selftest, CheckRow};
