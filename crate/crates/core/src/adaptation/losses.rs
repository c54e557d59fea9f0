//! Target-side objectives. Every function returns the loss value together
//! with its gradient at the level where the caller backpropagates: logits
//! for the classifier losses, normalized codes for the geometry losses.

use ndarray::{Array2, ArrayView1, Zip};

use super::complement::ComplementSets;
use crate::error::{PdaError, Result};
use crate::model::row_softmax;
use crate::numerics::{clamped_ln, entropy_nats, NORM_EPS};

/// Mean Shannon entropy (nats) of the rows of `probs`, and `dL/dlogits`.
pub fn loss_align(probs: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let n = probs.nrows();
    if n == 0 {
        return Err(PdaError::InvalidInput(
            "alignment loss of an empty batch".into(),
        ));
    }
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    for (p, mut g) in probs.rows().into_iter().zip(grad.rows_mut()) {
        let h = entropy_nats(p.as_slice().expect("standard layout"));
        total += h;
        // dH/du_k = -p_k (ln p_k + H)
        Zip::from(&mut g).and(&p).for_each(|g, &pk| {
            *g = if pk > 0.0 {
                -pk * (clamped_ln(pk) + h) / n as f64
            } else {
                0.0
            };
        });
    }
    Ok((total / n as f64, grad))
}

/// Inputs of the negative-learning loss for one mini-batch.
pub struct NegativeLearningBatch<'a> {
    /// Current-parameter logits `z_l2 . w^m`, one `batch x K` matrix per member.
    pub member_logits: &'a [Array2<f64>],
    /// Sum of the older moving-average entries for the batch rows (constants).
    pub history_sum: &'a Array2<f64>,
    /// Number of entries in the moving average, the current one included.
    pub window: usize,
    /// Complementary label sets of every batch row.
    pub complements: &'a [&'a ComplementSets],
}

/// Ensemble negative-learning loss and `dL/dlogits` for each member.
///
/// Member `m` sees `p = softmax((history_sum + logits_m) / window)` and is
/// penalized only on its own complement set:
/// `-(1/(B n_cl)) sum_j sum_{c in cl_m} (1 - p_c) ln(1 - p_c)`, averaged over members.
pub fn loss_nl(batch: &NegativeLearningBatch<'_>) -> Result<(f64, Vec<Array2<f64>>)> {
    let members = batch.member_logits.len();
    if members == 0 || batch.window == 0 {
        return Err(PdaError::InvalidInput(
            "negative learning needs members and a non-empty window".into(),
        ));
    }
    let rows = batch.history_sum.nrows();
    if batch.complements.len() != rows
        || batch
            .member_logits
            .iter()
            .any(|l| l.raw_dim() != batch.history_sum.raw_dim())
    {
        return Err(PdaError::Shape("negative-learning inputs disagree".into()));
    }
    if rows == 0 {
        return Ok((
            0.0,
            vec![Array2::zeros(batch.history_sum.raw_dim()); members],
        ));
    }
    let window = batch.window as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(members);
    for (m, logits) in batch.member_logits.iter().enumerate() {
        let averaged = (batch.history_sum + logits) / window;
        let probs = row_softmax(&averaged);
        let mut d_logits = Array2::zeros(probs.raw_dim());
        for (j, sets) in batch.complements.iter().enumerate() {
            let set = sets.sets.get(m).ok_or_else(|| {
                PdaError::Shape(format!("sample has no complement set for member {m}"))
            })?;
            if set.is_empty() {
                continue;
            }
            let scale = 1.0 / (members as f64 * rows as f64 * set.len() as f64);
            let p = probs.row(j);
            let mut dl_dp = vec![0.0; p.len()];
            for &c in set {
                let keep = 1.0 - p[c];
                let ln_keep = clamped_ln(keep);
                total -= scale * keep * ln_keep;
                // d/dp of -(1-p) ln(1-p)
                dl_dp[c] = scale * (ln_keep + 1.0);
            }
            softmax_backward_row(p, &dl_dp, d_logits.row_mut(j));
        }
        d_logits /= window;
        grads.push(d_logits);
    }
    Ok((total, grads))
}

fn softmax_backward_row(
    p: ArrayView1<'_, f64>,
    dl_dp: &[f64],
    mut out: ndarray::ArrayViewMut1<'_, f64>,
) {
    let mean: f64 = p.iter().zip(dl_dp).map(|(a, b)| a * b).sum();
    for ((o, &pk), &g) in out.iter_mut().zip(p.iter()).zip(dl_dp) {
        *o = pk * (g - mean);
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Relation {
    SameClass,
    DifferentClass,
}

/// Mean cosine distance over (ordered, distinct) code pairs matching
/// `relation`, plus the mean over (code, prototype) pairs matching it.
/// Gradient is with respect to the unit codes.
fn geometry_terms(
    z_l2: &Array2<f64>,
    labels: &[usize],
    prototypes: &Array2<f64>,
    relation: Relation,
) -> Result<(f64, Array2<f64>)> {
    if z_l2.nrows() != labels.len() {
        return Err(PdaError::Shape(format!(
            "{} codes for {} pseudo-labels",
            z_l2.nrows(),
            labels.len()
        )));
    }
    if prototypes.nrows() != z_l2.ncols() {
        return Err(PdaError::Shape(
            "prototype width differs from code width".into(),
        ));
    }
    let k = prototypes.ncols();
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(PdaError::InvalidInput(format!("pseudo-label {bad} >= {k}")));
    }
    let n = labels.len();
    let wanted = |a: usize, b: usize| match relation {
        Relation::SameClass => a == b,
        Relation::DifferentClass => a != b,
    };

    let mut unit_protos = prototypes.clone();
    for mut col in unit_protos.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm < NORM_EPS {
            return Err(PdaError::Degenerate("zero-norm prototype".into()));
        }
        col /= norm;
    }

    let mut grad = Array2::zeros(z_l2.raw_dim());

    // target-target pairs; each unordered pair appears twice
    let gram = z_l2.dot(&z_l2.t());
    let mut pair_count = 0usize;
    let mut pair_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && wanted(labels[i], labels[j]) {
                pair_count += 1;
                pair_sum += 1.0 - gram[[i, j]];
            }
        }
    }
    let mut value = 0.0;
    if pair_count > 0 {
        value += pair_sum / pair_count as f64;
        let scale = 2.0 / pair_count as f64;
        for i in 0..n {
            for j in 0..n {
                if i != j && wanted(labels[i], labels[j]) {
                    let zj = z_l2.row(j).to_owned();
                    grad.row_mut(i).scaled_add(-scale, &zj);
                }
            }
        }
    }

    // target-prototype pairs
    let cosines = z_l2.dot(&unit_protos);
    let mut proto_count = 0usize;
    let mut proto_sum = 0.0;
    for i in 0..n {
        for c in 0..k {
            if wanted(labels[i], c) {
                proto_count += 1;
                proto_sum += 1.0 - cosines[[i, c]];
            }
        }
    }
    if proto_count > 0 {
        value += proto_sum / proto_count as f64;
        let scale = 1.0 / proto_count as f64;
        for (i, &label) in labels.iter().enumerate().take(n) {
            for c in 0..k {
                if wanted(label, c) {
                    grad.row_mut(i).scaled_add(-scale, &unit_protos.column(c));
                }
            }
        }
    }
    Ok((value, grad))
}

/// Negated separation between differently-labeled codes and between codes
/// and the prototypes of other classes. Gradient is `dL/dz_l2`.
pub fn loss_inter(
    z_l2: &Array2<f64>,
    labels: &[usize],
    prototypes: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let (value, grad) = geometry_terms(z_l2, labels, prototypes, Relation::DifferentClass)?;
    Ok((-value, -grad))
}

/// Spread of same-labeled codes plus distance of each code to its own
/// prototype. Gradient is `dL/dz_l2`.
pub fn loss_intra(
    z_l2: &Array2<f64>,
    labels: &[usize],
    prototypes: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    geometry_terms(z_l2, labels, prototypes, Relation::SameClass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cosine_distance, finite_diff_grad, FD_STEP};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-7);
            assert!(rel < 1e-4, "analytic {x} numeric {y}");
        }
    }

    fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut z =
            Array2::<f64>::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0));
        for mut r in z.rows_mut() {
            let n: f64 = r.dot(&r);
            let n = n.sqrt();
            r /= n;
        }
        z
    }

    #[test]
    fn align_examples() {
        let (v, g) = loss_align(&array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let (v, _) = loss_align(&Array2::from_elem((3, 4), 0.25)).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn align_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-2.0..2.0));
        let (_, g) = loss_align(&row_softmax(&logits)).unwrap();
        let numeric = finite_diff_grad(
            |t| {
                let l = Array2::from_shape_vec((4, 5), t.to_vec()).unwrap();
                Ok(loss_align(&row_softmax(&l))?.0)
            },
            logits.as_slice().unwrap(),
            FD_STEP,
        )
        .unwrap();
        rel_close(g.as_slice().unwrap(), &numeric);
    }

    fn nl_value(
        logits: &[Array2<f64>],
        hist: &Array2<f64>,
        window: usize,
        sets: &[&ComplementSets],
    ) -> f64 {
        loss_nl(&NegativeLearningBatch {
            member_logits: logits,
            history_sum: hist,
            window,
            complements: sets,
        })
        .unwrap()
        .0
    }

    #[test]
    fn nl_fully_suppressed_complements_vanish() {
        // huge margin on class 0 drives complement probabilities to 0
        let logits = vec![array![[800.0, 0.0, 0.0]]];
        let sets = ComplementSets::shared(vec![1, 2], 1);
        let v = nl_value(&logits, &Array2::zeros((1, 3)), 1, &[&sets]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn nl_half_probability_term() {
        // two classes with equal logits: p = 0.5 on the single complement class
        let logits = vec![array![[0.3, 0.3]]];
        let sets = ComplementSets::shared(vec![1], 1);
        let v = nl_value(&logits, &Array2::zeros((1, 2)), 1, &[&sets]);
        assert!((v - 0.346574).abs() < 1e-6, "{v}");
        assert!((v + 0.5 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nl_gradient_per_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, k, members) = (4, 5, 2);
        let hist = Array2::from_shape_simple_fn((b, k), || rng.random_range(-2.0..2.0));
        let logits: Vec<Array2<f64>> = (0..members)
            .map(|_| Array2::from_shape_simple_fn((b, k), || rng.random_range(-2.0..2.0)))
            .collect();
        let sets: Vec<ComplementSets> = (0..b)
            .map(|j| {
                super::super::complement::gen_complement_sets(j % k, k, members, 2, &mut rng)
                    .unwrap()
            })
            .collect();
        let refs: Vec<&ComplementSets> = sets.iter().collect();
        let (_, grads) = loss_nl(&NegativeLearningBatch {
            member_logits: &logits,
            history_sum: &hist,
            window: 3,
            complements: &refs,
        })
        .unwrap();
        for m in 0..members {
            let numeric = finite_diff_grad(
                |t| {
                    let mut probe = logits.clone();
                    probe[m] = Array2::from_shape_vec((b, k), t.to_vec()).unwrap();
                    Ok(nl_value(&probe, &hist, 3, &refs))
                },
                logits[m].as_slice().unwrap(),
                FD_STEP,
            )
            .unwrap();
            rel_close(grads[m].as_slice().unwrap(), &numeric);
        }
    }

    #[test]
    fn inter_examples() {
        let protos = array![[1.0, 0.0], [0.0, 1.0]];
        // one shared label: no differing pairs, prototype term only
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let (v, _) = loss_inter(&z, &[0, 0], &protos).unwrap();
        let expected = -((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap()
            + cosine_distance(&[0.0, 1.0], &[0.0, 1.0]).unwrap())
            / 2.0);
        assert!((v - expected).abs() < 1e-15);

        // orthogonal codes with different labels, orthogonal prototype pair
        let protos = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let z = array![[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        // labels 0 and 1 with K = 2 prototypes (first two columns)
        let two = protos.slice(ndarray::s![.., 0..2]).to_owned();
        let (v, _) = loss_inter(&z, &[0, 1], &two).unwrap();
        let (pair, proto) = (1.0, (1.0 + 1.0) / 2.0);
        assert!((v - -(pair + proto)).abs() < 1e-15);
        assert_eq!(v, -2.0);
    }

    #[test]
    fn intra_examples() {
        let protos = array![[1.0, 0.0], [0.0, 1.0]];
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let (v, _) = loss_intra(&z, &[0, 0, 1], &protos).unwrap();
        assert!(v.abs() < 1e-15);

        let z = array![[1.0, 0.0], [-1.0, 0.0]];
        let (v, _) = loss_intra(&z, &[0, 0], &protos).unwrap();
        // pair term 2, prototype term (0 + 2) / 2
        assert!((v - (2.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn empty_terms_contribute_nothing() {
        let protos = array![[1.0, 0.0], [0.0, 1.0]];
        let z = Array2::<f64>::zeros((0, 2));
        assert_eq!(loss_inter(&z, &[], &protos).unwrap().0, 0.0);
        assert_eq!(loss_intra(&z, &[], &protos).unwrap().0, 0.0);
        let single = array![[0.6, 0.8]];
        let (v, g) = loss_intra(&single, &[1], &protos).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        assert_eq!(g.row(0).to_vec(), vec![0.0, -1.0]);
    }

    #[test]
    fn geometry_gradients_on_unit_codes() {
        // gradients are w.r.t. z_l2 treated as free variables
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = unit_rows(6, 4, &mut rng);
        let protos = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let labels = [0, 1, 1, 3, 0, 4];
        for f in [loss_inter, loss_intra] {
            let (_, g) = f(&z, &labels, &protos).unwrap();
            let numeric = finite_diff_grad(
                |t| {
                    Ok(f(
                        &Array2::from_shape_vec((6, 4), t.to_vec()).unwrap(),
                        &labels,
                        &protos,
                    )?
                    .0)
                },
                z.as_slice().unwrap(),
                FD_STEP,
            )
            .unwrap();
            rel_close(g.as_slice().unwrap(), &numeric);
        }
    }

    #[test]
    fn shape_errors() {
        let protos = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(loss_inter(&array![[1.0, 0.0]], &[0, 1], &protos).is_err());
        assert!(loss_intra(&array![[1.0, 0.0]], &[2], &protos).is_err());
        assert!(loss_align(&Array2::zeros((0, 3))).is_err());
    }
}
