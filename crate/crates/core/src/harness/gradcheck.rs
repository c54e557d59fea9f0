//! Finite-difference check of every training loss, end to end through the
//! encoder and the classifier weights it trains.

use ndarray::Array2;
use rand::Rng;

use crate::adaptation::{
    gen_complement_sets, loss_align, loss_inter, loss_intra, loss_nl, ComplementSets,
    NegativeLearningBatch,
};
use crate::error::Result;
use crate::model::{classifier_backward, classify, Activation, Encoder};
use crate::numerics::{finite_diff_grad, FD_STEP};
use crate::seeding::stream_rng;
use crate::source_trainer::{loss_ce, loss_comp};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 20;

const D_X: usize = 6;
const HIDDEN: usize = 8;
const D_Z: usize = 4;
const CLASSES: usize = 5;
const BATCH: usize = 8;
const MEMBERS: usize = 2;
const STREAM_GRADCHECK: u64 = 99;

pub const LOSS_NAMES: [&str; 6] = ["ce", "comp", "align", "nl", "inter", "intra"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Worst elementwise relative error per loss, in `LOSS_NAMES` order.
    pub max_rel_error: Vec<(&'static str, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error
            .iter()
            .all(|(_, e)| *e < GRADCHECK_TOLERANCE)
    }
}

/// Relative error with a floor on the denominator for near-zero entries.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

struct Instance {
    encoder: Encoder,
    x: Array2<f64>,
    labels: Vec<usize>,
    weights: Vec<Array2<f64>>,
    history_sum: Array2<f64>,
    complements: Vec<ComplementSets>,
}

impl Instance {
    fn new(seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, STREAM_GRADCHECK, 0);
        let encoder = Encoder::new(&[D_X, HIDDEN, D_Z], Activation::Tanh, rng.random())?;
        let mut uniform = |r: usize, c: usize, s: f64| {
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-s..s))
        };
        let x = uniform(BATCH, D_X, 2.0);
        let weights = vec![uniform(D_Z, CLASSES, 2.0), uniform(D_Z, CLASSES, 2.0)];
        let history_sum = uniform(BATCH, CLASSES, 3.0);
        let labels: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..CLASSES)).collect();
        let complements = labels
            .iter()
            .map(|&y| gen_complement_sets(y, CLASSES, MEMBERS, 2, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            encoder,
            x,
            labels,
            weights,
            history_sum,
            complements,
        })
    }

    /// Loss value and gradient over encoder parameters followed by the
    /// trained classifier weights.
    fn eval(
        &self,
        loss: &str,
        encoder: &Encoder,
        weights: &[Array2<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let codes = encoder.encode(&self.x)?;
        let z = &codes.z_l2;
        let (value, d_z, w_grads): (f64, Array2<f64>, Vec<Array2<f64>>) = match loss {
            "ce" | "comp" => {
                let out = classify(&weights[0], z)?;
                let (v, g) = if loss == "ce" {
                    loss_ce(&out.probs, &self.labels)?
                } else {
                    loss_comp(&out.probs, &self.labels)?
                };
                let (d_w, d_z) = classifier_backward(&weights[0], z, &g);
                (v, d_z, vec![d_w])
            }
            "align" => {
                let out = classify(&weights[0], z)?;
                let (v, g) = loss_align(&out.probs)?;
                let (_, d_z) = classifier_backward(&weights[0], z, &g);
                (v, d_z, vec![])
            }
            "nl" => {
                let logits: Vec<Array2<f64>> = weights.iter().map(|w| z.dot(w)).collect();
                let refs: Vec<&ComplementSets> = self.complements.iter().collect();
                let (v, grads) = loss_nl(&NegativeLearningBatch {
                    member_logits: &logits,
                    history_sum: &self.history_sum,
                    window: 3,
                    complements: &refs,
                })?;
                let mut d_z = Array2::zeros(z.raw_dim());
                let mut w_grads = Vec::new();
                for (w, g) in weights.iter().zip(&grads) {
                    let (d_w, d_zm) = classifier_backward(w, z, g);
                    d_z += &d_zm;
                    w_grads.push(d_w);
                }
                (v, d_z, w_grads)
            }
            "inter" => {
                let (v, g) = loss_inter(z, &self.labels, &weights[0])?;
                (v, g, vec![])
            }
            "intra" => {
                let (v, g) = loss_intra(z, &self.labels, &weights[0])?;
                (v, g, vec![])
            }
            other => unreachable!("unknown loss {other}"),
        };
        let mut grad = encoder.backward(&codes, &d_z).flatten();
        for g in &w_grads {
            grad.extend(g.iter());
        }
        Ok((value, grad))
    }

    fn trained_members(loss: &str) -> usize {
        match loss {
            "ce" | "comp" => 1,
            "nl" => MEMBERS,
            _ => 0,
        }
    }

    fn max_rel_error(&self, loss: &str) -> Result<f64> {
        let (_, analytic) = self.eval(loss, &self.encoder, &self.weights)?;
        let n_enc = self.encoder.param_count();
        let trained = Self::trained_members(loss);
        let mut theta = self.encoder.flat_params();
        for w in &self.weights[..trained] {
            theta.extend(w.iter());
        }
        let block = D_Z * CLASSES;
        let numeric = finite_diff_grad(
            |t| {
                let mut enc = self.encoder.clone();
                enc.set_flat_params(&t[..n_enc])?;
                let mut weights = self.weights.clone();
                for (m, w) in weights.iter_mut().take(trained).enumerate() {
                    let start = n_enc + m * block;
                    *w = Array2::from_shape_vec((D_Z, CLASSES), t[start..start + block].to_vec())
                        .expect("block shape");
                }
                Ok(self.eval(loss, &enc, &weights)?.0)
            },
            &theta,
            FD_STEP,
        )?;
        Ok(analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max))
    }
}

/// Runs every loss over `seeds` random instances derived from `base_seed`.
pub fn run_gradcheck(base_seed: u64, seeds: u64) -> Result<GradcheckReport> {
    let instances = (0..seeds)
        .map(|s| Instance::new(base_seed.wrapping_add(s)))
        .collect::<Result<Vec<_>>>()?;
    let mut max_rel_error = Vec::with_capacity(LOSS_NAMES.len());
    for name in LOSS_NAMES {
        let mut worst = 0.0f64;
        for inst in &instances {
            worst = worst.max(inst.max_rel_error(name)?);
        }
        max_rel_error.push((name, worst));
    }
    Ok(GradcheckReport { max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_few_seeds() {
        let report = run_gradcheck(100, 3).unwrap();
        assert_eq!(report.max_rel_error.len(), 6);
        assert!(report.passed(), "{report:?}");
    }
}
