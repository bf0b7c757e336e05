//! Cross-validation folds and mini-batch assembly.

use crate::error::{Error, Result};
use crate::optim::shuffle_epoch;
use crate::tensor::{Rng, Stream};

/// Fold id for each of `n` samples: a seeded permutation cut into `k`
/// contiguous runs whose sizes differ by at most one.
pub fn kfold_assign(n: usize, k: usize, fold_seed: u64) -> Result<Vec<usize>> {
    if k == 0 || n < k {
        return Err(Error::Input(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let order: Vec<usize> = (0..n).collect();
    let order = shuffle_epoch(&order, &mut Rng::stream(fold_seed, Stream::Folds, &[]));
    let mut fold = vec![0; n];
    for f in 0..k {
        for &i in &order[f * n / k..(f + 1) * n / k] {
            fold[i] = f;
        }
    }
    Ok(fold)
}

/// Sample indices assigned to `fold`, ascending.
pub fn fold_members(assign: &[usize], fold: usize) -> Vec<usize> {
    (0..assign.len()).filter(|&i| assign[i] == fold).collect()
}

/// Sample indices in every fold except `fold`, ascending.
pub fn fold_complement(assign: &[usize], fold: usize) -> Vec<usize> {
    (0..assign.len()).filter(|&i| assign[i] != fold).collect()
}

/// Shuffle `indices` and cut them into batches; the last batch may be short.
pub fn make_batches(
    indices: &[usize],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(shuffle_epoch(indices, rng)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Cut `indices` into batches in order, for evaluation.
pub fn sequential_batches(indices: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(indices.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(assign: &[usize], k: usize) -> Vec<usize> {
        let mut s = vec![0; k];
        for &f in assign {
            s[f] += 1;
        }
        s
    }

    #[test]
    fn isi_train_fold_sizes() {
        let mut s = sizes(&kfold_assign(19392, 10, 1).unwrap(), 10);
        s.sort_unstable();
        assert_eq!(
            s,
            [1939, 1939, 1939, 1939, 1939, 1939, 1939, 1939, 1940, 1940]
        );
    }

    #[test]
    fn one_per_fold() {
        let mut a = kfold_assign(10, 10, 5).unwrap();
        a.sort_unstable();
        assert_eq!(a, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn stable_for_seed() {
        assert_eq!(
            kfold_assign(100, 10, 3).unwrap(),
            kfold_assign(100, 10, 3).unwrap()
        );
        assert_ne!(
            kfold_assign(100, 10, 3).unwrap(),
            kfold_assign(100, 10, 4).unwrap()
        );
    }

    #[test]
    fn too_few_samples() {
        assert!(kfold_assign(9, 10, 1).is_err());
    }

    #[test]
    fn batches_of_hundred() {
        let idx: Vec<usize> = (0..100).collect();
        let b = make_batches(&idx, 32, &mut Rng::new(1)).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [32, 32, 32, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, idx);
        assert!(make_batches(&idx, 0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn test_batches_of_sixty_four() {
        let idx: Vec<usize> = (0..130).collect();
        let b = sequential_batches(&idx, 64).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [64, 64, 2]);
        assert_eq!(b.concat(), idx);
    }
}
