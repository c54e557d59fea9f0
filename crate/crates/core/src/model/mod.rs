//! Feature encoder, prototype classifiers, and the optimizer.

use ndarray::Array2;

use crate::error::Result;

mod checkpoint;
mod classifier;
mod encoder;
mod optim;

pub use checkpoint::Checkpoint;
pub(crate) use classifier::row_softmax;
pub use classifier::{
    classifier_backward, classify, update_weights, LinearClassifierOutput, PrototypeMatrix,
};
pub use encoder::{Activation, DenseLayer, Encoded, Encoder, EncoderGradients};
pub use optim::{apply_sgd_momentum, lr_schedule, LR_ALPHA, LR_GAMMA, MOMENTUM};

/// Classifier layers train at this multiple of the encoder learning rate.
pub const CLASSIFIER_LR_MULTIPLIER: f64 = 10.0;

/// Argmax class of every row of `x` under `weights`.
pub fn predict(encoder: &Encoder, weights: &Array2<f64>, x: &Array2<f64>) -> Result<Vec<usize>> {
    let codes = encoder.encode(x)?;
    Ok(classify(weights, &codes.z_l2)?.predictions())
}
