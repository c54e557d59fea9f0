//! Labeled source sets, unlabeled target sets, and mini-batching.
//!
//! Target sets may carry the true class of every sample for evaluation. Those
//! labels live in [`HiddenLabels`], which exposes nothing to training code; only
//! the evaluator and the feature-file writer can read them.

mod io;
mod synthetic;

pub use io::{parse_feature_file, read_feature_file, render_feature_file, write_feature_file};
pub use synthetic::{generate_synthetic, quantize, SyntheticSpec};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{PdaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Target,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

/// Evaluation-only labels of a target set.
#[derive(Clone, PartialEq, Eq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Read access for the evaluator and the feature-file writer.
    pub(crate) fn reveal(&self) -> &[usize] {
        &self.0
    }
}

impl std::fmt::Debug for HiddenLabels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "HiddenLabels({} entries)", self.0.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    num_classes: usize,
    role: Role,
    hidden: Option<HiddenLabels>,
}

impl Dataset {
    /// A labeled source set. Every sample must carry a label below `num_classes`.
    pub fn source(samples: Vec<Sample>, dim: usize, num_classes: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            match s.label {
                None => {
                    return Err(PdaError::InvalidInput(format!(
                        "source sample {i} has no label"
                    )))
                }
                Some(l) if l >= num_classes => {
                    return Err(PdaError::InvalidInput(format!(
                        "source sample {i} label {l} >= {num_classes}"
                    )))
                }
                _ => {}
            }
        }
        Self::checked(samples, dim, num_classes, Role::Source, None)
    }

    /// An unlabeled target set, optionally with evaluation labels.
    pub fn target(
        features: Vec<Vec<f64>>,
        dim: usize,
        num_classes: usize,
        hidden: Option<HiddenLabels>,
    ) -> Result<Self> {
        if let Some(h) = &hidden {
            if h.len() != features.len() {
                return Err(PdaError::InvalidInput(format!(
                    "{} hidden labels for {} target samples",
                    h.len(),
                    features.len()
                )));
            }
            if let Some(bad) = h.0.iter().find(|&&l| l >= num_classes) {
                return Err(PdaError::InvalidInput(format!(
                    "hidden label {bad} >= {num_classes}"
                )));
            }
        }
        let samples = features
            .into_iter()
            .map(|features| Sample {
                features,
                label: None,
            })
            .collect();
        Self::checked(samples, dim, num_classes, Role::Target, hidden)
    }

    fn checked(
        samples: Vec<Sample>,
        dim: usize,
        num_classes: usize,
        role: Role,
        hidden: Option<HiddenLabels>,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(PdaError::InvalidInput(
                "dimension and class count must be positive".into(),
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(PdaError::Shape(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|x| !x.is_finite()) {
                return Err(PdaError::InvalidInput(format!(
                    "sample {i} has non-finite features"
                )));
            }
        }
        Ok(Self {
            samples,
            dim,
            num_classes,
            role,
            hidden,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn hidden_labels(&self) -> Option<&HiddenLabels> {
        self.hidden.as_ref()
    }

    /// Replaces the evaluation labels of a target set.
    pub fn with_hidden_labels(mut self, hidden: Option<HiddenLabels>) -> Result<Self> {
        if self.role != Role::Target {
            return Err(PdaError::InvalidInput(
                "only target sets carry hidden labels".into(),
            ));
        }
        if let Some(h) = &hidden {
            if h.len() != self.len() || h.0.iter().any(|&l| l >= self.num_classes) {
                return Err(PdaError::InvalidInput("hidden labels do not fit".into()));
            }
        }
        self.hidden = hidden;
        Ok(self)
    }

    /// Training labels of a source set.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| PdaError::InvalidInput("dataset is not labeled".into()))
            })
            .collect()
    }

    /// All feature vectors as an `n x d` matrix.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.rows(&all)
    }

    /// Selected feature vectors as a `batch x d` matrix.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim));
        for (r, &i) in indices.iter().enumerate() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(&self.samples[i].features) {
                *o = x;
            }
        }
        out
    }
}

/// Splits a seeded permutation of `0..n` into consecutive chunks of `batch_size`.
pub fn epoch_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(PdaError::InvalidInput(
            "cannot batch an empty dataset".into(),
        ));
    }
    if batch_size == 0 {
        return Err(PdaError::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
