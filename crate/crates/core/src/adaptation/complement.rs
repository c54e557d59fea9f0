use rand::seq::index::sample;
use rand::Rng;

use crate::error::{PdaError, Result};

/// Disjoint complementary-label sets for one sample, one per ensemble member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplementSets {
    /// Each set is sorted ascending.
    pub sets: Vec<Vec<usize>>,
}

impl ComplementSets {
    /// The same set handed to every member.
    pub fn shared(set: Vec<usize>, members: usize) -> Self {
        Self {
            sets: vec![set; members],
        }
    }
}

/// Draws `members` disjoint sets of `per_set` classes, none equal to `pseudo_label`.
///
/// Starting from every class except the pseudo-label, each set is sampled
/// without replacement and then removed from the pool.
pub fn gen_complement_sets<R: Rng + ?Sized>(
    pseudo_label: usize,
    classes: usize,
    members: usize,
    per_set: usize,
    rng: &mut R,
) -> Result<ComplementSets> {
    if pseudo_label >= classes {
        return Err(PdaError::InvalidInput(format!(
            "pseudo-label {pseudo_label} >= {classes} classes"
        )));
    }
    if members * per_set > classes - 1 {
        return Err(PdaError::Config(format!(
            "{members} sets of {per_set} labels need more than the {} complement classes",
            classes - 1
        )));
    }
    let mut pool: Vec<usize> = (0..classes).filter(|&c| c != pseudo_label).collect();
    let mut sets = Vec::with_capacity(members);
    for _ in 0..members {
        let picked = sample(rng, pool.len(), per_set).into_vec();
        let mut set: Vec<usize> = picked.iter().map(|&i| pool[i]).collect();
        set.sort_unstable();
        pool.retain(|c| set.binary_search(c).is_err());
        sets.push(set);
    }
    Ok(ComplementSets { sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_sound(sets: &ComplementSets, y: usize, k: usize, per_set: usize) {
        let mut seen = vec![false; k];
        for set in &sets.sets {
            assert_eq!(set.len(), per_set);
            for &c in set {
                assert!(c < k && c != y);
                assert!(!seen[c], "overlap at {c}");
                seen[c] = true;
            }
        }
    }

    #[test]
    fn two_pairs_from_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sets = gen_complement_sets(0, 5, 2, 2, &mut rng).unwrap();
        assert_eq!(sets.sets.len(), 2);
        assert_sound(&sets, 0, 5, 2);
    }

    #[test]
    fn exhaustive_when_sets_fill_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sets = gen_complement_sets(3, 10, 3, 3, &mut rng).unwrap();
        let mut union: Vec<usize> = sets.sets.concat();
        union.sort_unstable();
        assert_eq!(union, vec![0, 1, 2, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn seeded_trials_stay_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..1000u64 {
            let k = 2 + (trial % 30) as usize;
            let per_set = 1 + (trial as usize / 3) % (k - 1);
            let members = 1 + (trial as usize / 7) % ((k - 1) / per_set);
            let y = (trial as usize * 13) % k;
            let sets = gen_complement_sets(y, k, members, per_set, &mut rng).unwrap();
            assert_sound(&sets, y, k, per_set);
        }
    }

    #[test]
    fn too_many_labels_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            gen_complement_sets(0, 5, 3, 2, &mut rng),
            Err(PdaError::Config(_))
        ));
        assert!(gen_complement_sets(5, 5, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_sets() {
        let a = gen_complement_sets(2, 12, 3, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gen_complement_sets(2, 12, 3, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }
}
