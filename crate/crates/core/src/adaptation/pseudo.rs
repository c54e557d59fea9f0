//! Ensemble pseudo-labels, CAC scores, and the confident subset.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{PdaError, Result};
use crate::model::{row_softmax, PrototypeMatrix};
use crate::numerics::{argmax, entropy, LogBase, ProbVector};

/// Target classifiers plus the moving window of ensemble-mean logits.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    weights: Vec<Array2<f64>>,
    /// Oldest first; each entry is `n_t x K_s`.
    history: VecDeque<Array2<f64>>,
    window: usize,
    epoch_counter: usize,
}

impl EnsembleState {
    /// `members` copies of the source prototypes with an empty history.
    pub fn new(prototypes: &PrototypeMatrix, members: usize, window: usize) -> Result<Self> {
        if members == 0 || window == 0 {
            return Err(PdaError::Config(
                "ensemble size and averaging window must be positive".into(),
            ));
        }
        Ok(Self {
            weights: vec![prototypes.weights().clone(); members],
            history: VecDeque::with_capacity(window),
            window,
            epoch_counter: 0,
        })
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn members(&self) -> usize {
        self.weights.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn epoch_counter(&self) -> usize {
        self.epoch_counter
    }

    /// `(1/n_e) sum_m z_l2 . w^m` for every row of `z_l2`.
    pub fn mean_logits(&self, z_l2: &Array2<f64>) -> Array2<f64> {
        let mut total = Array2::zeros((z_l2.nrows(), self.weights[0].ncols()));
        for w in &self.weights {
            total += &z_l2.dot(w);
        }
        total / self.weights.len() as f64
    }

    /// Appends this epoch's ensemble-mean logits, dropping the oldest entry
    /// once the window is full.
    pub fn push_epoch(&mut self, z_l2: &Array2<f64>) -> Result<()> {
        if let Some(first) = self.history.front() {
            if first.nrows() != z_l2.nrows() {
                return Err(PdaError::Shape(
                    "target set size changed between epochs".into(),
                ));
            }
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(self.mean_logits(z_l2));
        self.epoch_counter += 1;
        Ok(())
    }

    /// Sum of every stored entry except the newest. Zero when only one exists.
    pub fn history_sum_before_latest(&self) -> Result<Array2<f64>> {
        let latest = self
            .history
            .back()
            .ok_or_else(|| PdaError::Precondition("logit history is empty".into()))?;
        let mut total = Array2::zeros(latest.raw_dim());
        for entry in self.history.iter().take(self.history.len() - 1) {
            total += entry;
        }
        Ok(total)
    }

    /// Softmax of the averaged history, its argmax, and CAC per sample.
    pub fn pseudo_label_table(&self) -> Result<PseudoLabelTable> {
        let first = self
            .history
            .front()
            .ok_or_else(|| PdaError::Precondition("logit history is empty".into()))?;
        let mut mean = Array2::zeros(first.raw_dim());
        for entry in &self.history {
            mean += entry;
        }
        mean /= self.history.len() as f64;
        PseudoLabelTable::from_probs(row_softmax(&mean))
    }
}

/// Pushes the epoch's ensemble logits for the full target set and refreshes
/// the pseudo-labels.
pub fn update_pseudo_labels(
    ensemble: &mut EnsembleState,
    z_l2: &Array2<f64>,
) -> Result<PseudoLabelTable> {
    ensemble.push_epoch(z_l2)?;
    ensemble.pseudo_label_table()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelTable {
    /// `n_t x K_s` averaged ensemble probabilities.
    pub probs: Array2<f64>,
    pub labels: Vec<usize>,
    pub cac: Vec<f64>,
}

impl PseudoLabelTable {
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        let mut labels = Vec::with_capacity(probs.nrows());
        let mut scores = Vec::with_capacity(probs.nrows());
        for row in probs.rows() {
            let p = ProbVector::from_softmax(row.to_vec());
            labels.push(argmax(p.as_slice()));
            scores.push(cac(&p)?);
        }
        Ok(Self {
            probs,
            labels,
            cac: scores,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn prob_vector(&self, sample: usize) -> ProbVector {
        ProbVector::from_softmax(self.probs.row(sample).to_vec())
    }
}

/// Confidence-adjusted certainty: `1 - H_2(p) (1 - max p) / log2 K`, in `[0, 1]`.
pub fn cac(p: &ProbVector) -> Result<f64> {
    let k = p.len();
    if k < 2 {
        return Err(PdaError::Precondition(
            "CAC needs at least two classes".into(),
        ));
    }
    let h = entropy(p, LogBase::Two);
    Ok((1.0 - h * (1.0 - p.max()) / (k as f64).log2()).clamp(0.0, 1.0))
}

/// Samples trusted for the class-geometry and late supervised losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidentSubset {
    /// Mean CAC over the whole target set.
    pub tau: f64,
    /// Ascending sample indices.
    pub members: Vec<usize>,
    mask: Vec<bool>,
}

impl ConfidentSubset {
    pub fn contains(&self, sample: usize) -> bool {
        self.mask.get(sample).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Every sample, regardless of its score.
    pub fn everyone(table: &PseudoLabelTable) -> Self {
        Self {
            tau: mean(&table.cac),
            members: (0..table.len()).collect(),
            mask: vec![true; table.len()],
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Samples whose CAC is strictly above the mean CAC.
pub fn build_confident_subset(table: &PseudoLabelTable) -> ConfidentSubset {
    let tau = mean(&table.cac);
    let mask: Vec<bool> = table.cac.iter().map(|&c| c > tau).collect();
    let members = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    ConfidentSubset { tau, members, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::classify;
    use crate::numerics::softmax;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn cac_examples() {
        for k in 2..=64 {
            assert!((cac(&ProbVector::one_hot(k, k / 2)).unwrap() - 1.0).abs() < 1e-9);
            let u = cac(&ProbVector::uniform(k)).unwrap();
            assert!((u - 1.0 / k as f64).abs() < 1e-9, "k={k}: {u}");
        }
        let p = ProbVector::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((cac(&p).unwrap() - 0.75).abs() < 1e-12);
        assert!(cac(&ProbVector::one_hot(1, 0)).is_err());
    }

    fn table_with_scores(scores: Vec<f64>) -> PseudoLabelTable {
        PseudoLabelTable {
            probs: Array2::zeros((scores.len(), 2)),
            labels: vec![0; scores.len()],
            cac: scores,
        }
    }

    #[test]
    fn confident_subset_examples() {
        let s = build_confident_subset(&table_with_scores(vec![1.0, 0.0]));
        assert_eq!((s.tau, s.members.clone()), (0.5, vec![0]));
        assert!(s.contains(0) && !s.contains(1) && !s.contains(9));

        let s = build_confident_subset(&table_with_scores(vec![0.4; 5]));
        assert!(s.is_empty());

        let s = build_confident_subset(&table_with_scores(vec![0.9, 0.8, 0.1]));
        assert!((s.tau - 0.6).abs() < 1e-15);
        assert_eq!(s.members, vec![0, 1]);

        let all = ConfidentSubset::everyone(&table_with_scores(vec![0.9, 0.8, 0.1]));
        assert_eq!(all.members, vec![0, 1, 2]);
    }

    #[test]
    fn single_member_single_epoch_is_direct_softmax() {
        let protos = PrototypeMatrix::from_weights(random(4, 5, 1));
        let z = random(7, 4, 2);
        let mut ens = EnsembleState::new(&protos, 1, 1).unwrap();
        let table = update_pseudo_labels(&mut ens, &z).unwrap();
        let direct = classify(protos.weights(), &z).unwrap();
        assert_eq!(table.probs, direct.probs);
        assert_eq!(table.labels, direct.predictions());
        // a second epoch replaces the first
        let z2 = random(7, 4, 3);
        let table = update_pseudo_labels(&mut ens, &z2).unwrap();
        assert_eq!(table.probs, classify(protos.weights(), &z2).unwrap().probs);
        assert_eq!(ens.history_len(), 1);
        assert_eq!(ens.epoch_counter(), 2);
    }

    #[test]
    fn constant_history_is_its_softmax() {
        let protos = PrototypeMatrix::from_weights(random(3, 4, 5));
        let z = random(6, 3, 6);
        let mut ens = EnsembleState::new(&protos, 3, 4).unwrap();
        for _ in 0..4 {
            update_pseudo_labels(&mut ens, &z).unwrap();
        }
        let table = ens.pseudo_label_table().unwrap();
        let direct = classify(protos.weights(), &z).unwrap();
        for (a, b) in table.probs.iter().zip(direct.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_epoch_window_averages_logits() {
        let protos = PrototypeMatrix::from_weights(random(3, 4, 7));
        let (z1, z2) = (random(5, 3, 8), random(5, 3, 9));
        let mut ens = EnsembleState::new(&protos, 2, 3).unwrap();
        update_pseudo_labels(&mut ens, &z1).unwrap();
        let table = update_pseudo_labels(&mut ens, &z2).unwrap();
        // independent route: per-sample scalar logits, mean, then softmax
        let w = protos.weights();
        for j in 0..5 {
            let logits: Vec<f64> = (0..4)
                .map(|c| {
                    let l1: f64 = (0..3).map(|d| z1[[j, d]] * w[[d, c]]).sum();
                    let l2: f64 = (0..3).map(|d| z2[[j, d]] * w[[d, c]]).sum();
                    (l1 + l2) / 2.0
                })
                .collect();
            let expected = softmax(&logits).unwrap();
            for (a, b) in table
                .prob_vector(j)
                .as_slice()
                .iter()
                .zip(expected.as_slice())
            {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(
            ens.history_sum_before_latest().unwrap(),
            ens.mean_logits(&z1)
        );
    }

    #[test]
    fn argmax_survives_constant_logit_shift() {
        let protos = PrototypeMatrix::from_weights(random(3, 4, 10));
        let mut ens = EnsembleState::new(&protos, 1, 3).unwrap();
        update_pseudo_labels(&mut ens, &random(6, 3, 11)).unwrap();
        update_pseudo_labels(&mut ens, &random(6, 3, 12)).unwrap();
        let before = ens.pseudo_label_table().unwrap().labels;
        for entry in ens.history.iter_mut() {
            *entry += 17.25;
        }
        assert_eq!(ens.pseudo_label_table().unwrap().labels, before);
    }

    #[test]
    fn empty_history_is_a_precondition_error() {
        let protos = PrototypeMatrix::from_weights(random(3, 4, 1));
        let ens = EnsembleState::new(&protos, 2, 2).unwrap();
        assert!(matches!(
            ens.pseudo_label_table(),
            Err(PdaError::Precondition(_))
        ));
        assert!(EnsembleState::new(&protos, 0, 2).is_err());
        assert_eq!(ens.weights()[1], *protos.weights());
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let t = PseudoLabelTable::from_probs(array![[0.25, 0.375, 0.375, 0.0]]).unwrap();
        assert_eq!(t.labels, vec![1]);
    }
}
