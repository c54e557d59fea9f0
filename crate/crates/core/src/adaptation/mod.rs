//! Phase 2: adapt the encoder and an ensemble of target classifiers to an
//! unlabeled target set while the source prototypes stay frozen.
//!
//! Each epoch starts with a forward pass over the whole target set that
//! refreshes the moving-average pseudo-labels, their CAC scores and the
//! confident subset. Mini-batches then minimize, by phase:
//!
//! * `epoch < warmup_epochs`: entropy alignment to the prototypes only;
//! * `warmup_epochs <= epoch <= switch_epoch`: negative learning on fresh
//!   complementary label sets, plus the weighted class-geometry terms and
//!   alignment;
//! * `epoch > switch_epoch`: cross-entropy on confident pseudo-labels through
//!   the first ensemble member replaces negative learning.

mod complement;
mod losses;
mod pseudo;

pub use complement::{gen_complement_sets, ComplementSets};
pub use losses::{loss_align, loss_inter, loss_intra, loss_nl, NegativeLearningBatch};
pub use pseudo::{
    build_confident_subset, cac, update_pseudo_labels, ConfidentSubset, EnsembleState,
    PseudoLabelTable,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datasets::{epoch_batches, Dataset};
use crate::error::{PdaError, Result};
use crate::harness::evaluate;
use crate::model::{
    classifier_backward, classify, lr_schedule, update_weights, Encoder, EncoderGradients,
    PrototypeMatrix, CLASSIFIER_LR_MULTIPLIER, LR_ALPHA, LR_GAMMA, MOMENTUM,
};
use crate::seeding::{stream_rng, STREAM_COMPLEMENT, STREAM_TARGET_BATCHES};
use crate::source_trainer::loss_ce;

fn default_n_a() -> usize {
    10
}
fn default_n_e() -> usize {
    3
}
fn default_n_cl() -> usize {
    3
}
fn default_alpha() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    1.5
}
fn default_epochs() -> usize {
    2500
}
fn default_warmup() -> usize {
    5
}
fn default_switch() -> usize {
    15
}
fn default_lr0() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    /// Moving-average window, in epochs.
    #[serde(default = "default_n_a")]
    pub n_a: usize,
    /// Ensemble size.
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    /// Complementary labels per member and sample.
    #[serde(default = "default_n_cl")]
    pub n_cl: usize,
    /// Weight of the inter-class separation term.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Weight of the intra-class compactness term.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    /// Last epoch trained with negative learning.
    #[serde(default = "default_switch")]
    pub switch_epoch: usize,
    /// Encoder learning rate at epoch 0; the classifiers use ten times this.
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Restrict geometry and late cross-entropy terms to the confident subset.
    #[serde(default = "default_true")]
    pub confident_filter: bool,
    /// Draw one complementary set per sample and hand it to every member.
    #[serde(default)]
    pub share_complement_set: bool,
    /// Derived from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            n_a: default_n_a(),
            n_e: default_n_e(),
            n_cl: default_n_cl(),
            alpha: default_alpha(),
            beta: default_beta(),
            epochs: default_epochs(),
            warmup_epochs: default_warmup(),
            switch_epoch: default_switch(),
            lr0: default_lr0(),
            batch_size: default_batch(),
            confident_filter: true,
            share_complement_set: false,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    /// Checks the configuration against a label space of `classes` classes.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.n_a == 0 || self.n_e == 0 || self.n_cl == 0 {
            return Err(PdaError::Config(
                "n_a, n_e and n_cl must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(PdaError::Config("batch_size must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lr0", self.lr0),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PdaError::Config(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        if self.warmup_epochs >= self.switch_epoch {
            return Err(PdaError::Config(format!(
                "warmup_epochs ({}) must be below switch_epoch ({})",
                self.warmup_epochs, self.switch_epoch
            )));
        }
        let per_sample = if self.share_complement_set {
            1
        } else {
            self.n_e
        } * self.n_cl;
        if classes < 2 || per_sample > classes - 1 {
            return Err(PdaError::Config(format!(
                "n_e * n_cl = {per_sample} exceeds the {} complementary classes",
                classes.saturating_sub(1)
            )));
        }
        Ok(())
    }
}

/// Training phase of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptPhase {
    Warmup,
    NegativeLearning,
    Supervised,
}

impl AdaptConfig {
    pub fn phase(&self, epoch: usize) -> AdaptPhase {
        if epoch < self.warmup_epochs {
            AdaptPhase::Warmup
        } else if epoch <= self.switch_epoch {
            AdaptPhase::NegativeLearning
        } else {
            AdaptPhase::Supervised
        }
    }
}

/// One row of the adaptation metric log. Losses are means over the epoch's
/// mini-batches; a term that is inactive or has zero weight logs 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptEpochLog {
    pub epoch: usize,
    /// Negative-learning loss, or the pseudo-label cross-entropy after the switch.
    pub loss_nl: f64,
    pub loss_inter: f64,
    pub loss_intra: f64,
    pub loss_align: f64,
    pub tau: f64,
    pub confident: usize,
    pub target_acc: Option<f64>,
}

pub const ADAPT_LOG_HEADER: &str =
    "epoch,loss_nl,loss_inter,loss_intra,loss_align,tau,|D_tau|,target_acc";

impl AdaptEpochLog {
    pub fn csv_row(&self) -> String {
        let acc = self.target_acc.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss_nl,
            self.loss_inter,
            self.loss_intra,
            self.loss_align,
            self.tau,
            self.confident,
            acc
        )
    }
}

pub fn adapt_log_csv(log: &[AdaptEpochLog]) -> String {
    let mut out = String::from(ADAPT_LOG_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Per-epoch view of the adaptation state, for instrumentation.
pub trait AdaptObserver {
    /// Called after the epoch's pseudo-label refresh and before any update.
    /// `complements` is present in negative-learning epochs only.
    fn on_epoch(
        &mut self,
        _epoch: usize,
        _table: &PseudoLabelTable,
        _subset: &ConfidentSubset,
        _complements: Option<&[ComplementSets]>,
    ) {
    }
}

struct NoObserver;
impl AdaptObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub encoder: Encoder,
    /// The frozen source prototypes, untouched.
    pub prototypes: PrototypeMatrix,
    pub ensemble: EnsembleState,
    pub log: Vec<AdaptEpochLog>,
}

impl AdaptOutcome {
    /// Weights of the classifier used for evaluation.
    pub fn eval_weights(&self) -> &Array2<f64> {
        &self.ensemble.weights()[0]
    }
}

/// Adapts `encoder` to `target` under frozen `prototypes`.
pub fn adapt(
    encoder: Encoder,
    prototypes: &PrototypeMatrix,
    target: &Dataset,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    adapt_observed(encoder, prototypes, target, cfg, &mut NoObserver)
}

/// As [`adapt`], reporting every epoch's pseudo-labels to `observer`.
pub fn adapt_observed(
    mut encoder: Encoder,
    prototypes: &PrototypeMatrix,
    target: &Dataset,
    cfg: &AdaptConfig,
    observer: &mut dyn AdaptObserver,
) -> Result<AdaptOutcome> {
    let classes = prototypes.num_classes();
    cfg.validate(classes)?;
    if !prototypes.is_frozen() {
        return Err(PdaError::Precondition(
            "adaptation needs frozen source prototypes".into(),
        ));
    }
    if target.dim() != encoder.input_dim() || prototypes.dim() != encoder.output_dim() {
        return Err(PdaError::Shape(
            "target set, encoder and prototypes disagree on dimensions".into(),
        ));
    }
    if target.is_empty() {
        return Err(PdaError::InvalidInput("target set is empty".into()));
    }

    let mu = prototypes.weights();
    let all_features = target.feature_matrix();
    let mut ensemble = EnsembleState::new(prototypes, cfg.n_e, cfg.n_a)?;
    let mut batch_rng = stream_rng(cfg.seed, STREAM_TARGET_BATCHES, 0);
    let mut enc_velocity = EncoderGradients::zeros_like(&encoder);
    let mut member_velocity = vec![Array2::zeros(mu.raw_dim()); cfg.n_e];
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let phase = cfg.phase(epoch);
        let lr = lr_schedule(epoch, cfg.lr0, LR_GAMMA, LR_ALPHA);
        let clf_lr = CLASSIFIER_LR_MULTIPLIER * lr;

        let full = encoder
            .encode(&all_features)
            .map_err(|e| diverged(e, epoch))?;
        let table = update_pseudo_labels(&mut ensemble, &full.z_l2)?;
        let subset = if cfg.confident_filter {
            build_confident_subset(&table)
        } else {
            ConfidentSubset::everyone(&table)
        };
        let history_sum = ensemble.history_sum_before_latest()?;
        let complements = if phase == AdaptPhase::NegativeLearning {
            let mut rng = stream_rng(cfg.seed, STREAM_COMPLEMENT, epoch as u64);
            let sets = table
                .labels
                .iter()
                .map(|&y| {
                    if cfg.share_complement_set {
                        gen_complement_sets(y, classes, 1, cfg.n_cl, &mut rng)
                            .map(|s| ComplementSets::shared(s.sets[0].clone(), cfg.n_e))
                    } else {
                        gen_complement_sets(y, classes, cfg.n_e, cfg.n_cl, &mut rng)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Some(sets)
        } else {
            None
        };
        observer.on_epoch(epoch, &table, &subset, complements.as_deref());

        let batches = epoch_batches(target.len(), cfg.batch_size, &mut batch_rng)?;
        let mut sums = [0.0f64; 4];
        for batch in &batches {
            let x = target.rows(batch);
            let codes = encoder.encode(&x).map_err(|e| diverged(e, epoch))?;
            let z = &codes.z_l2;

            // alignment under frozen prototypes, encoder only
            let aligned = classify(mu, z)?;
            let (align, d_align_logits) = loss_align(&aligned.probs)?;
            let (_, mut d_z) = classifier_backward(mu, z, &d_align_logits);
            let mut member_grads: Vec<Option<Array2<f64>>> = vec![None; cfg.n_e];
            let (mut nl, mut inter, mut intra) = (0.0, 0.0, 0.0);

            let confident_rows: Vec<usize> = (0..batch.len())
                .filter(|&r| subset.contains(batch[r]))
                .collect();
            let confident_labels: Vec<usize> = confident_rows
                .iter()
                .map(|&r| table.labels[batch[r]])
                .collect();

            match phase {
                AdaptPhase::Warmup => {}
                AdaptPhase::NegativeLearning => {
                    let sets = complements.as_ref().expect("generated for this phase");
                    let batch_sets: Vec<&ComplementSets> =
                        batch.iter().map(|&i| &sets[i]).collect();
                    let member_logits: Vec<Array2<f64>> =
                        ensemble.weights().iter().map(|w| z.dot(w)).collect();
                    let hist = history_sum.select(Axis(0), batch);
                    let (value, grads) = loss_nl(&NegativeLearningBatch {
                        member_logits: &member_logits,
                        history_sum: &hist,
                        window: ensemble.history_len(),
                        complements: &batch_sets,
                    })?;
                    nl = value;
                    for (m, g) in grads.into_iter().enumerate() {
                        let (d_w, d_zm) = classifier_backward(&ensemble.weights()[m], z, &g);
                        d_z += &d_zm;
                        member_grads[m] = Some(d_w);
                    }
                }
                AdaptPhase::Supervised => {
                    if !confident_rows.is_empty() {
                        let zc = z.select(Axis(0), &confident_rows);
                        let out = classify(&ensemble.weights()[0], &zc)?;
                        let (value, g) = loss_ce(&out.probs, &confident_labels)?;
                        nl = value;
                        let (d_w, d_zc) = classifier_backward(&ensemble.weights()[0], &zc, &g);
                        scatter_add(&mut d_z, &confident_rows, &d_zc);
                        member_grads[0] = Some(d_w);
                    }
                }
            }

            if phase != AdaptPhase::Warmup && !confident_rows.is_empty() {
                let zc = z.select(Axis(0), &confident_rows);
                if cfg.alpha != 0.0 {
                    let (value, g) = loss_inter(&zc, &confident_labels, mu)?;
                    inter = value;
                    scatter_add(&mut d_z, &confident_rows, &(g * cfg.alpha));
                }
                if cfg.beta != 0.0 {
                    let (value, g) = loss_intra(&zc, &confident_labels, mu)?;
                    intra = value;
                    scatter_add(&mut d_z, &confident_rows, &(g * cfg.beta));
                }
            }

            for (s, v) in sums.iter_mut().zip([nl, inter, intra, align]) {
                if !v.is_finite() {
                    return Err(PdaError::Diverged { epoch });
                }
                *s += v;
            }

            let enc_grads = encoder.backward(&codes, &d_z);
            encoder
                .apply_update(&enc_grads, &mut enc_velocity, lr, MOMENTUM)
                .map_err(|e| diverged(e, epoch))?;
            for (m, g) in member_grads.iter().enumerate() {
                if let Some(g) = g {
                    update_weights(
                        &mut ensemble.weights_mut()[m],
                        g,
                        &mut member_velocity[m],
                        clf_lr,
                        MOMENTUM,
                    )
                    .map_err(|e| diverged(e, epoch))?;
                }
            }
        }

        let target_acc = match target.hidden_labels() {
            Some(_) => Some(
                evaluate(&encoder, &ensemble.weights()[0], target)
                    .map_err(|e| diverged(e, epoch))?
                    .accuracy,
            ),
            None => None,
        };
        let n = batches.len() as f64;
        log.push(AdaptEpochLog {
            epoch,
            loss_nl: sums[0] / n,
            loss_inter: sums[1] / n,
            loss_intra: sums[2] / n,
            loss_align: sums[3] / n,
            tau: subset.tau,
            confident: subset.len(),
            target_acc,
        });
    }

    Ok(AdaptOutcome {
        encoder,
        prototypes: prototypes.clone(),
        ensemble,
        log,
    })
}

fn scatter_add(dst: &mut Array2<f64>, rows: &[usize], src: &Array2<f64>) {
    for (r, &row) in rows.iter().enumerate() {
        let mut d = dst.row_mut(row);
        d += &src.row(r);
    }
}

fn diverged(err: PdaError, epoch: usize) -> PdaError {
    match err {
        PdaError::Numeric(_) => PdaError::Diverged { epoch },
        other => other,
    }
}
