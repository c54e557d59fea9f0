use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::apply_sgd_momentum;
use crate::error::{PdaError, Result};
use crate::numerics::NORM_EPS;

/// Nonlinearity applied after every hidden layer. The output layer is linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Feed-forward feature encoder `d_x -> hidden... -> d_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    layers: Vec<DenseLayer>,
    activation: Activation,
    seed: u64,
}

/// Forward-pass results kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Raw codes, `batch x d_z`.
    pub z: Array2<f64>,
    /// Row-normalized codes.
    pub z_l2: Array2<f64>,
    /// Row norms of `z`.
    pub norms: Vec<f64>,
    /// Rows whose norm fell below the normalization guard.
    pub degenerate_rows: usize,
    /// Input of every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
}

/// Gradients (or momentum buffers) shaped like an [`Encoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl EncoderGradients {
    pub fn zeros_like(encoder: &Encoder) -> Self {
        Self {
            weights: encoder
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: encoder
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    /// Same order as [`Encoder::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &EncoderGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

impl Encoder {
    /// Glorot-uniform weights and zero biases. `dims = [d_x, hidden.., d_z]`.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(PdaError::Config(format!(
                "encoder needs at least input and output widths, all positive; got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                DenseLayer {
                    weight: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            seed,
        })
    }

    /// Single linear layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![DenseLayer {
                weight: Array2::eye(dim),
                bias: Array1::zeros(dim),
            }],
            activation: Activation::Identity,
            seed: 0,
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>, activation: Activation, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(PdaError::Config("encoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.ncols() != pair[1].weight.nrows() {
                return Err(PdaError::Shape("consecutive layer widths differ".into()));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weight.ncols()) {
            return Err(PdaError::Shape(
                "bias length differs from layer width".into(),
            ));
        }
        Ok(Self {
            layers,
            activation,
            seed,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass followed by row-wise l2 normalization.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Encoded> {
        if x.ncols() != self.input_dim() {
            return Err(PdaError::Shape(format!(
                "encoder expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = current.dot(&layer.weight) + &layer.bias;
            if i < last && self.activation == Activation::Tanh {
                out.mapv_inplace(f64::tanh);
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(PdaError::Numeric(format!(
                    "non-finite activation in encoder layer {i}"
                )));
            }
            inputs.push(current);
            current = out;
        }
        let z = current;
        let mut z_l2 = z.clone();
        let mut norms = Vec::with_capacity(z.nrows());
        let mut degenerate_rows = 0;
        for mut row in z_l2.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n < NORM_EPS {
                degenerate_rows += 1;
            }
            row /= n.max(NORM_EPS);
            norms.push(n);
        }
        Ok(Encoded {
            z,
            z_l2,
            norms,
            degenerate_rows,
            inputs,
        })
    }

    /// Backpropagates `dL/dz_l2` through the normalization and every layer.
    pub fn backward(&self, enc: &Encoded, d_z_l2: &Array2<f64>) -> EncoderGradients {
        // (I - z^ z^T) / |z| applied row-wise
        let mut delta = d_z_l2.clone();
        Zip::from(delta.rows_mut())
            .and(enc.z_l2.rows())
            .and(&enc.norms)
            .for_each(|mut g, zhat, &n| {
                if n < NORM_EPS {
                    g /= NORM_EPS;
                } else {
                    let proj = g.dot(&zhat);
                    g.scaled_add(-proj, &zhat);
                    g /= n;
                }
            });

        let mut grads = EncoderGradients::zeros_like(self);
        for i in (0..self.layers.len()).rev() {
            let input = &enc.inputs[i];
            grads.weights[i] = input.t().dot(&delta);
            grads.biases[i] = delta.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.layers[i].weight.t());
            // the input of layer i is the activated output of hidden layer i-1
            if self.activation == Activation::Tanh {
                Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|g, &a| *g *= 1.0 - a * a);
            }
            delta = upstream;
        }
        grads
    }

    /// Weights then bias for each layer, row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(PdaError::Shape(format!(
                "{} parameters for an encoder with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }

    /// One SGD-with-momentum step over every layer.
    pub fn apply_update(
        &mut self,
        grads: &EncoderGradients,
        velocity: &mut EncoderGradients,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            apply_sgd_momentum(
                layer.weight.as_slice_mut().expect("standard layout"),
                grads.weights[i].as_slice().expect("standard layout"),
                velocity.weights[i].as_slice_mut().expect("standard layout"),
                lr,
                momentum,
            )?;
            apply_sgd_momentum(
                layer.bias.as_slice_mut().expect("standard layout"),
                grads.biases[i].as_slice().expect("standard layout"),
                velocity.biases[i].as_slice_mut().expect("standard layout"),
                lr,
                momentum,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, FD_STEP};
    use ndarray::array;

    fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0))
    }

    #[test]
    fn identity_encoder_passes_inputs_through() {
        let enc = Encoder::identity(3);
        let x = array![[1.0, -2.0, 0.5], [3.0, 0.0, 4.0]];
        let out = enc.encode(&x).unwrap();
        assert_eq!(out.z, x);
        assert_eq!(out.z_l2.row(1).to_vec(), vec![0.6, 0.0, 0.8]);
    }

    #[test]
    fn codes_are_unit_rows() {
        let enc = Encoder::new(&[5, 7, 3], Activation::Tanh, 1).unwrap();
        let out = enc.encode(&random_batch(20, 5, 2)).unwrap();
        for row in out.z_l2.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
        assert_eq!(out.degenerate_rows, 0);
    }

    #[test]
    fn degenerate_rows_are_counted() {
        let enc = Encoder::identity(2);
        let out = enc.encode(&array![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(out.degenerate_rows, 1);
        assert_eq!(out.z_l2.row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_wrong_width_and_nonfinite() {
        let enc = Encoder::identity(2);
        assert!(matches!(
            enc.encode(&array![[1.0, 2.0, 3.0]]),
            Err(PdaError::Shape(_))
        ));
        let err = enc.encode(&array![[f64::NAN, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Encoder::new(&[6, 8, 4], Activation::Tanh, 5).unwrap();
        let b = Encoder::new(&[6, 8, 4], Activation::Tanh, 5).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= limit));
        assert_eq!(a.param_count(), 6 * 8 + 8 + 8 * 4 + 4);
        assert_eq!(a.dims(), vec![6, 8, 4]);
        assert!(Encoder::new(&[6], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let enc = Encoder::new(&[6, 8, 4], Activation::Tanh, seed).unwrap();
            let x = random_batch(8, 6, 100 + seed);
            let fwd = enc.encode(&x).unwrap();
            // d(sum z_l2)/dz_l2 = ones
            let analytic = enc
                .backward(&fwd, &Array2::ones(fwd.z_l2.raw_dim()))
                .flatten();
            let mut probe = enc.clone();
            let numeric = finite_diff_grad(
                |theta| {
                    probe.set_flat_params(theta)?;
                    Ok(probe.encode(&x)?.z_l2.sum())
                },
                &enc.flat_params(),
                FD_STEP,
            )
            .unwrap();
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
                assert!(rel < 1e-4, "seed {seed}: analytic {a} numeric {n}");
            }
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut enc = Encoder::new(&[3, 4, 2], Activation::Tanh, 9).unwrap();
        let mut p = enc.flat_params();
        p[0] = 123.0;
        enc.set_flat_params(&p).unwrap();
        assert_eq!(enc.layers()[0].weight[[0, 0]], 123.0);
        assert_eq!(enc.flat_params(), p);
        assert!(enc.set_flat_params(&p[1..]).is_err());
    }
}
