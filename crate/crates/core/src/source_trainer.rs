//! Phase 1: learn the encoder and the source prototypes.
//!
//! The objective is cross-entropy plus `eta` times the complement objective,
//! which flattens the probability mass spread over the non-ground-truth
//! classes. Both losses are averaged per mini-batch.

use std::sync::mpsc::Sender;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datasets::{epoch_batches, Dataset};
use crate::error::{PdaError, Result};
use crate::model::{
    classifier_backward, classify, lr_schedule, predict, Encoder, EncoderGradients,
    PrototypeMatrix, CLASSIFIER_LR_MULTIPLIER, LR_ALPHA, LR_GAMMA, MOMENTUM,
};
use crate::numerics::clamped_ln;
use crate::seeding::{stream_rng, STREAM_SOURCE_BATCHES};

fn default_eta() -> f64 {
    1.5
}
fn default_epochs() -> usize {
    250
}
fn default_lr0() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePhaseConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Encoder learning rate at epoch 0; the classifier uses ten times this.
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Derived from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SourcePhaseConfig {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            epochs: default_epochs(),
            lr0: default_lr0(),
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

impl SourcePhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(PdaError::Config("eta must be a non-negative number".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(PdaError::Config("lr0 must be a non-negative number".into()));
        }
        if self.batch_size == 0 {
            return Err(PdaError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn loss_ce(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(probs, labels)?;
    let n = labels.len() as f64;
    let mut grad = probs / n;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= clamped_ln(probs[[i, y]]);
        grad[[i, y]] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

/// Complement objective and its gradient with respect to the logits.
///
/// Per sample, `(1 - p_g) * sum_{c != g} q_c ln q_c` with `q_c = p_c / (1 - p_g)`,
/// averaged over the batch and divided by `K - 1`. The value is never positive.
pub fn loss_comp(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(probs, labels)?;
    let k = probs.ncols();
    if k < 2 {
        return Err(PdaError::InvalidInput(
            "complement objective needs at least two classes".into(),
        ));
    }
    let scale = 1.0 / (labels.len() as f64 * (k - 1) as f64);
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    let mut dl_dp = vec![0.0; k];
    for (i, &g) in labels.iter().enumerate() {
        let p = probs.row(i);
        // summing the complement keeps every q_c <= 1 under rounding
        let rest: f64 = (0..k).filter(|&c| c != g).map(|c| p[c]).sum();
        let ln_rest = clamped_ln(rest);
        let mut l = 0.0;
        for c in 0..k {
            if c == g {
                dl_dp[c] = 0.0;
            } else {
                let ln_q = clamped_ln(p[c]) - ln_rest;
                l += p[c] * ln_q;
                dl_dp[c] = ln_q;
            }
        }
        total += l;
        let mean: f64 = (0..k).map(|c| p[c] * dl_dp[c]).sum();
        for c in 0..k {
            grad[[i, c]] = scale * p[c] * (dl_dp[c] - mean);
        }
    }
    Ok((total * scale, grad))
}

fn check_labels(probs: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() != labels.len() || labels.is_empty() {
        return Err(PdaError::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= probs.ncols()) {
        return Err(PdaError::InvalidInput(format!(
            "label {bad} >= {} classes",
            probs.ncols()
        )));
    }
    Ok(())
}

/// One row of the source metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceEpochLog {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_comp: f64,
    pub source_acc: f64,
    pub lr: f64,
    /// Codes that hit the normalization guard during the epoch.
    pub degenerate_codes: usize,
}

pub const SOURCE_LOG_HEADER: &str = "epoch,loss_ce,loss_comp,source_acc,lr";

impl SourceEpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.loss_ce, self.loss_comp, self.source_acc, self.lr
        )
    }
}

pub fn source_log_csv(log: &[SourceEpochLog]) -> String {
    let mut out = String::from(SOURCE_LOG_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct SourceOutcome {
    pub encoder: Encoder,
    /// Frozen on return.
    pub prototypes: PrototypeMatrix,
    pub log: Vec<SourceEpochLog>,
}

/// Trains encoder and prototypes on a labeled source set, then freezes the prototypes.
pub fn train_source(
    encoder: Encoder,
    prototypes: PrototypeMatrix,
    source: &Dataset,
    cfg: &SourcePhaseConfig,
) -> Result<SourceOutcome> {
    run(encoder, prototypes, source, cfg, None)
}

/// As [`train_source`], additionally sending every epoch row down `sink`.
///
/// Sending never blocks; a dropped receiver is ignored.
pub fn train_source_streaming(
    encoder: Encoder,
    prototypes: PrototypeMatrix,
    source: &Dataset,
    cfg: &SourcePhaseConfig,
    sink: &Sender<SourceEpochLog>,
) -> Result<SourceOutcome> {
    run(encoder, prototypes, source, cfg, Some(sink))
}

fn run(
    mut encoder: Encoder,
    mut prototypes: PrototypeMatrix,
    source: &Dataset,
    cfg: &SourcePhaseConfig,
    sink: Option<&Sender<SourceEpochLog>>,
) -> Result<SourceOutcome> {
    cfg.validate()?;
    if source.dim() != encoder.input_dim()
        || prototypes.dim() != encoder.output_dim()
        || prototypes.num_classes() != source.num_classes()
    {
        return Err(PdaError::Shape(
            "source set, encoder and prototypes disagree on dimensions".into(),
        ));
    }
    if prototypes.is_frozen() {
        return Err(PdaError::Precondition(
            "source training needs unfrozen prototypes".into(),
        ));
    }
    let labels = source.labels()?;
    let all_features = source.feature_matrix();
    let mut batch_rng = stream_rng(cfg.seed, STREAM_SOURCE_BATCHES, 0);
    let mut enc_velocity = EncoderGradients::zeros_like(&encoder);
    let mut proto_velocity = Array2::zeros(prototypes.weights().raw_dim());
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr0, LR_GAMMA, LR_ALPHA);
        let batches = epoch_batches(source.len(), cfg.batch_size, &mut batch_rng)?;
        let (mut ce_sum, mut comp_sum, mut degenerate) = (0.0, 0.0, 0);
        for batch in &batches {
            let x = source.rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let codes = encoder.encode(&x).map_err(|e| diverged(e, epoch))?;
            degenerate += codes.degenerate_rows;
            let out = classify(prototypes.weights(), &codes.z_l2)?;
            let (ce, mut d_logits) = loss_ce(&out.probs, &y)?;
            let (comp, d_comp) = loss_comp(&out.probs, &y)?;
            if cfg.eta != 0.0 {
                d_logits.scaled_add(cfg.eta, &d_comp);
            }
            if !ce.is_finite() || !comp.is_finite() {
                return Err(PdaError::Diverged { epoch });
            }
            ce_sum += ce;
            comp_sum += comp;

            let (d_w, d_z) = classifier_backward(prototypes.weights(), &codes.z_l2, &d_logits);
            let enc_grads = encoder.backward(&codes, &d_z);
            encoder
                .apply_update(&enc_grads, &mut enc_velocity, lr, MOMENTUM)
                .map_err(|e| diverged(e, epoch))?;
            prototypes
                .apply_update(
                    &d_w,
                    &mut proto_velocity,
                    CLASSIFIER_LR_MULTIPLIER * lr,
                    MOMENTUM,
                )
                .map_err(|e| diverged(e, epoch))?;
        }
        let predictions = predict(&encoder, prototypes.weights(), &all_features)
            .map_err(|e| diverged(e, epoch))?;
        let correct = predictions
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
        let row = SourceEpochLog {
            epoch,
            loss_ce: ce_sum / batches.len() as f64,
            loss_comp: comp_sum / batches.len() as f64,
            source_acc: correct as f64 / labels.len() as f64,
            lr,
            degenerate_codes: degenerate,
        };
        if let Some(tx) = sink {
            let _ = tx.send(row);
        }
        log.push(row);
    }

    prototypes.freeze();
    Ok(SourceOutcome {
        encoder,
        prototypes,
        log,
    })
}

fn diverged(err: PdaError, epoch: usize) -> PdaError {
    match err {
        PdaError::Numeric(_) => PdaError::Diverged { epoch },
        other => other,
    }
}
