use ndarray::Array2;
use serde::Serialize;

use crate::datasets::{Dataset, HiddenLabels};
use crate::error::{PdaError, Result};
use crate::model::{predict, Encoder};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Accuracy per class; `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
    /// Fraction of samples predicted into classes absent from the labels.
    pub negative_transfer: f64,
}

/// Scores `predictions` against evaluation labels over `classes` classes.
pub fn score_predictions(
    predictions: &[usize],
    hidden: &HiddenLabels,
    classes: usize,
) -> Result<Evaluation> {
    let truth = hidden.reveal();
    if truth.len() != predictions.len() || truth.is_empty() {
        return Err(PdaError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut totals = vec![0usize; classes];
    let mut hits = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(truth) {
        if y >= classes {
            return Err(PdaError::InvalidInput(format!("label {y} >= {classes}")));
        }
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let private = predictions
        .iter()
        .filter(|&&p| p >= classes || totals[p] == 0)
        .count();
    let n = predictions.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        per_class: totals
            .iter()
            .zip(&hits)
            .map(|(&t, &h)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        negative_transfer: private as f64 / n,
    })
}

/// Accuracy of `encoder` with classifier `weights` on a target set's hidden labels.
pub fn evaluate(encoder: &Encoder, weights: &Array2<f64>, data: &Dataset) -> Result<Evaluation> {
    let hidden = data.hidden_labels().ok_or_else(|| {
        PdaError::EvaluationUnavailable("dataset carries no hidden labels".into())
    })?;
    let predictions = predict(encoder, weights, &data.feature_matrix())?;
    score_predictions(&predictions, hidden, weights.ncols())
}
