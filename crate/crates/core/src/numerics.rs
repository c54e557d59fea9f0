//! Scalar and vector primitives shared by every loss.
//!
//! Everything here is a pure function of its inputs.

use crate::error::{PdaError, Result};

/// Lower clamp applied to every probability before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Default guard used by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Default step for [`finite_diff_grad`].
pub const FD_STEP: f64 = 1e-5;

/// A probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates entries in `[0, 1]` summing to one within `1e-9`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(PdaError::InvalidInput("empty probability vector".into()));
        }
        if values
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(PdaError::InvalidInput(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PdaError::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut values = vec![0.0; k];
        values[class] = 1.0;
        Self(values)
    }

    pub(crate) fn from_softmax(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Logarithm base for [`entropy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    Natural,
    Two,
}

/// Stable softmax: subtracts the maximum before exponentiating.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(PdaError::InvalidInput("softmax of empty vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(PdaError::InvalidInput("softmax input is not finite".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(ProbVector(out))
}

/// Unchecked softmax used on hot paths whose inputs are already validated.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Result of [`l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Euclidean norm of the input.
    pub norm: f64,
    /// Set when the input norm fell below the guard.
    pub degenerate: bool,
}

/// `v / max(|v|, eps)`.
pub fn l2_normalize(v: &[f64], eps: f64) -> Result<Normalized> {
    if v.is_empty() {
        return Err(PdaError::InvalidInput(
            "cannot normalize empty vector".into(),
        ));
    }
    let norm = norm(v);
    let denom = norm.max(eps);
    Ok(Normalized {
        values: v.iter().map(|x| x / denom).collect(),
        norm,
        degenerate: norm < eps,
    })
}

/// Shannon entropy with `0 log 0 = 0`.
pub fn entropy(p: &ProbVector, base: LogBase) -> f64 {
    let nats = entropy_nats(p.as_slice());
    match base {
        LogBase::Natural => nats,
        LogBase::Two => nats / std::f64::consts::LN_2,
    }
}

pub(crate) fn entropy_nats(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * clamped_ln(x))
        .sum::<f64>()
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PdaError::Shape(format!(
            "cosine distance between lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_EPS || nb < NORM_EPS {
        return Err(PdaError::Degenerate(
            "cosine distance of a near-zero vector".into(),
        ));
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(PdaError::Numeric(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Natural log with the argument clamped at [`LOG_CLAMP`].
#[inline]
pub fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_CLAMP).ln()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
