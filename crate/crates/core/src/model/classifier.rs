use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::optim::apply_sgd_momentum;
use crate::error::{PdaError, Result};
use crate::numerics::{softmax_into, ProbVector};

/// Zero-bias linear classifier whose columns are class prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    /// `d_z x K_s`
    weights: Array2<f64>,
    frozen: bool,
}

impl PrototypeMatrix {
    /// Glorot-uniform random prototypes.
    pub fn random(d_z: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (d_z + classes) as f64).sqrt();
        Self {
            weights: Array2::from_shape_simple_fn((d_z, classes), || {
                rng.random_range(-limit..limit)
            }),
            frozen: false,
        }
    }

    pub fn from_weights(weights: Array2<f64>) -> Self {
        Self {
            weights,
            frozen: false,
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// SGD-with-momentum step. A frozen matrix is left untouched.
    pub fn apply_update(
        &mut self,
        grads: &Array2<f64>,
        velocity: &mut Array2<f64>,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        update_weights(&mut self.weights, grads, velocity, lr, momentum)
    }

    /// SHA-256 over the little-endian bytes of every weight.
    pub fn checksum(&self) -> String {
        weights_checksum(&self.weights)
    }
}

pub(crate) fn weights_checksum(weights: &Array2<f64>) -> String {
    let mut hasher = Sha256::new();
    for w in weights.iter() {
        hasher.update(w.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Momentum step on a raw weight matrix.
pub fn update_weights(
    weights: &mut Array2<f64>,
    grads: &Array2<f64>,
    velocity: &mut Array2<f64>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if weights.shape() != grads.shape() || weights.shape() != velocity.shape() {
        return Err(PdaError::Shape("classifier update shapes differ".into()));
    }
    apply_sgd_momentum(
        weights.as_slice_mut().expect("standard layout"),
        grads
            .as_standard_layout()
            .as_slice()
            .expect("standard layout"),
        velocity.as_slice_mut().expect("standard layout"),
        lr,
        momentum,
    )
}

/// Logits and class probabilities for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifierOutput {
    /// `batch x K_s`
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl LinearClassifierOutput {
    pub fn prob_vector(&self, row: usize) -> ProbVector {
        ProbVector::from_softmax(self.probs.row(row).to_vec())
    }

    /// Argmax per row, lowest index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| crate::numerics::argmax(r.as_slice().expect("standard layout")))
            .collect()
    }
}

/// `logits = z_l2 . W`, probabilities by row-wise stable softmax.
pub fn classify(weights: &Array2<f64>, z_l2: &Array2<f64>) -> Result<LinearClassifierOutput> {
    if weights.nrows() != z_l2.ncols() {
        return Err(PdaError::Shape(format!(
            "classifier expects codes of width {}, got {}",
            weights.nrows(),
            z_l2.ncols()
        )));
    }
    let logits = z_l2.dot(weights);
    let probs = row_softmax(&logits);
    Ok(LinearClassifierOutput { logits, probs })
}

pub(crate) fn row_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = Array2::zeros(logits.raw_dim());
    for (src, mut dst) in logits.rows().into_iter().zip(probs.rows_mut()) {
        softmax_into(
            src.as_slice().expect("standard layout"),
            dst.as_slice_mut().expect("standard layout"),
        );
    }
    probs
}

/// Returns `(dL/dW, dL/dz_l2)` given `dL/dlogits`.
pub fn classifier_backward(
    weights: &Array2<f64>,
    z_l2: &Array2<f64>,
    d_logits: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    (z_l2.t().dot(d_logits), d_logits.dot(&weights.t()))
}
