use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{DataConfig, ExperimentConfig, ModelConfig};
use super::eval::{evaluate, Evaluation};
use crate::adaptation::{adapt, adapt_log_csv, AdaptConfig, AdaptOutcome};
use crate::datasets::{generate_synthetic, read_feature_file, Dataset};
use crate::error::{PdaError, Result};
use crate::model::{Checkpoint, Encoder, PrototypeMatrix};
use crate::seeding::{derive_seed, STREAM_ENCODER_INIT, STREAM_PROTOTYPE_INIT};
use crate::source_trainer::{source_log_csv, train_source, SourceOutcome, SourcePhaseConfig};

pub const SOURCE_LOG_FILE: &str = "source_log.csv";
pub const ADAPT_LOG_FILE: &str = "adapt_log.csv";
pub const SOURCE_CKPT_FILE: &str = "source.ckpt";
pub const ADAPTED_CKPT_FILE: &str = "adapted.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Source and target sets named by the config.
pub fn load_data(data: &DataConfig) -> Result<(Dataset, Dataset)> {
    match data {
        DataConfig::Synthetic(spec) => generate_synthetic(spec),
        DataConfig::Files { source, target } => {
            Ok((read_feature_file(source)?, read_feature_file(target)?))
        }
    }
}

/// The source set alone.
pub fn load_source(data: &DataConfig) -> Result<Dataset> {
    match data {
        DataConfig::Synthetic(spec) => Ok(generate_synthetic(spec)?.0),
        DataConfig::Files { source, .. } => read_feature_file(source),
    }
}

/// The target set alone; source files are never opened.
pub fn load_target(data: &DataConfig) -> Result<Dataset> {
    match data {
        DataConfig::Synthetic(spec) => Ok(generate_synthetic(spec)?.1),
        DataConfig::Files { target, .. } => read_feature_file(target),
    }
}

/// Freshly initialized encoder and prototypes for `classes` classes.
pub fn init_model(
    model: &ModelConfig,
    input_dim: usize,
    classes: usize,
    seed: u64,
) -> Result<(Encoder, PrototypeMatrix)> {
    let encoder = Encoder::new(
        &model.dims(input_dim),
        model.activation,
        derive_seed(seed, STREAM_ENCODER_INIT, 0),
    )?;
    let prototypes = PrototypeMatrix::random(
        model.d_z,
        classes,
        derive_seed(seed, STREAM_PROTOTYPE_INIT, 0),
    );
    Ok((encoder, prototypes))
}

/// Initializes a model and runs the source phase.
pub fn run_source_phase(
    model: &ModelConfig,
    cfg: &SourcePhaseConfig,
    seed: u64,
    source: &Dataset,
) -> Result<SourceOutcome> {
    let (encoder, prototypes) = init_model(model, source.dim(), source.num_classes(), seed)
        .map_err(|e| e.in_phase("source"))?;
    train_source(encoder, prototypes, source, cfg).map_err(|e| e.in_phase("source"))
}

/// Adapts a source checkpoint to `target`.
pub fn run_adapt_phase(
    checkpoint: &Checkpoint,
    cfg: &AdaptConfig,
    target: &Dataset,
) -> Result<AdaptOutcome> {
    adapt(
        checkpoint.encoder.clone(),
        &checkpoint.prototypes,
        target,
        cfg,
    )
    .map_err(|e| e.in_phase("adapt"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub baseline: Evaluation,
    pub adapted: Evaluation,
    pub prototype_checksum: String,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: Summary,
    pub source_log_csv: String,
    pub adapt_log_csv: String,
    pub source_checkpoint: Checkpoint,
    pub adapted_checkpoint: Checkpoint,
}

/// Generate or load data, train on the source, adapt, evaluate, and write
/// artifacts when an output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (source, target) = load_data(&cfg.data).map_err(|e| e.in_phase("data"))?;
    if source.dim() != target.dim() || source.num_classes() != target.num_classes() {
        return Err(PdaError::Shape(
            "source and target sets disagree on dimension or label space".into(),
        )
        .in_phase("data"));
    }
    cfg.adapt
        .validate(source.num_classes())
        .map_err(|e| e.in_phase("adapt"))?;

    let trained = run_source_phase(&cfg.model, &cfg.source, cfg.seed, &source)?;
    let source_checkpoint = Checkpoint {
        encoder: trained.encoder.clone(),
        prototypes: trained.prototypes.clone(),
        ensemble: Vec::new(),
    };
    let baseline = evaluate(&trained.encoder, trained.prototypes.weights(), &target)
        .map_err(|e| e.in_phase("evaluate"))?;

    let adapted = run_adapt_phase(&source_checkpoint, &cfg.adapt, &target)?;
    let adapted_eval = evaluate(&adapted.encoder, adapted.eval_weights(), &target)
        .map_err(|e| e.in_phase("evaluate"))?;
    let adapted_checkpoint = Checkpoint {
        encoder: adapted.encoder.clone(),
        prototypes: adapted.prototypes.clone(),
        ensemble: adapted.ensemble.weights().to_vec(),
    };

    let result = ExperimentResult {
        summary: Summary {
            seed: cfg.seed,
            baseline,
            adapted: adapted_eval,
            prototype_checksum: adapted.prototypes.checksum(),
        },
        source_log_csv: source_log_csv(&trained.log),
        adapt_log_csv: adapt_log_csv(&adapted.log),
        source_checkpoint,
        adapted_checkpoint,
    };
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(&result, dir).map_err(|e| e.in_phase("write"))?;
    }
    Ok(result)
}

pub fn write_artifacts(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SOURCE_LOG_FILE), &result.source_log_csv)?;
    fs::write(dir.join(ADAPT_LOG_FILE), &result.adapt_log_csv)?;
    result.source_checkpoint.save(dir.join(SOURCE_CKPT_FILE))?;
    result
        .adapted_checkpoint
        .save(dir.join(ADAPTED_CKPT_FILE))?;
    fs::write(dir.join(SUMMARY_FILE), result.summary.to_json())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SyntheticSpec;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: 3,
            data: DataConfig::Synthetic(SyntheticSpec {
                k_s: 5,
                k_t: 3,
                d_x: 4,
                source_per_class: 15,
                target_per_class: 10,
                cluster_std: 0.5,
                rotation_angle: 0.3,
                translation: vec![],
                seed: 4,
            }),
            model: ModelConfig {
                hidden: vec![8],
                d_z: 6,
                ..Default::default()
            },
            source: SourcePhaseConfig {
                epochs: 5,
                ..Default::default()
            },
            adapt: AdaptConfig {
                n_e: 2,
                n_cl: 2,
                epochs: 4,
                warmup_epochs: 1,
                switch_epoch: 2,
                ..Default::default()
            },
            output_dir: None,
        };
        cfg.set_seed(3);
        cfg
    }

    #[test]
    fn zero_epochs_keep_baseline_accuracy() {
        let mut cfg = small();
        cfg.source.epochs = 0;
        cfg.adapt.epochs = 0;
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.summary.adapted, r.summary.baseline);
        assert_eq!(r.adapted_checkpoint.encoder, r.source_checkpoint.encoder);
    }

    #[test]
    fn writes_every_artifact_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.output_dir = Some(dir.path().to_path_buf());
        let r = run_experiment(&cfg).unwrap();
        for f in [
            SOURCE_LOG_FILE,
            ADAPT_LOG_FILE,
            SOURCE_CKPT_FILE,
            ADAPTED_CKPT_FILE,
            SUMMARY_FILE,
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let ckpt = Checkpoint::load(dir.path().join(ADAPTED_CKPT_FILE)).unwrap();
        let target = load_target(&cfg.data).unwrap();
        let replay = evaluate(&ckpt.encoder, ckpt.eval_weights(), &target).unwrap();
        assert_eq!(replay, r.summary.adapted);
        let base = Checkpoint::load(dir.path().join(SOURCE_CKPT_FILE)).unwrap();
        let replay = evaluate(&base.encoder, base.eval_weights(), &target).unwrap();
        assert_eq!(replay, r.summary.baseline);
    }

    #[test]
    fn phase_errors_name_the_phase() {
        let mut cfg = small();
        cfg.source.lr0 = 1e308;
        let err = run_experiment(&cfg).unwrap_err();
        assert!(err.to_string().starts_with("source phase failed"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
}
