//! Experiment orchestration: configuration, evaluation, ablations and the
//! gradient-check suite.

mod ablation;
mod config;
mod eval;
mod experiment;
mod gradcheck;

pub use ablation::{apply_ablation, AblationSpec};
pub use config::{seed_override, DataConfig, ExperimentConfig, ModelConfig, SEED_ENV};
pub use eval::{evaluate, score_predictions, Evaluation};
pub use experiment::{
    init_model, load_data, load_source, load_target, run_adapt_phase, run_experiment,
    run_source_phase, write_artifacts, ExperimentResult, Summary, ADAPTED_CKPT_FILE,
    ADAPT_LOG_FILE, SOURCE_CKPT_FILE, SOURCE_LOG_FILE, SUMMARY_FILE,
};
pub use gradcheck::{
    relative_error, run_gradcheck, GradcheckReport, GRADCHECK_SEEDS, GRADCHECK_TOLERANCE,
    LOSS_NAMES,
};
