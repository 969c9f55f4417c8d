//! Stratified k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MultiViewDataset;
use crate::{Error, Result};

/// Deterministic stratified k-fold split: `(train, test)` index pairs whose
/// test sets partition `0..n` with per-class counts differing by at most one
/// across folds.
pub fn stratified_split(
    dataset: &MultiViewDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    let sizes = dataset.class_sizes();
    for (j, &count) in sizes.iter().enumerate() {
        if count < k {
            return Err(Error::ClassSmallerThanFolds {
                class: j + 1,
                count,
                k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 1..=dataset.c {
        let mut indices: Vec<usize> = (0..dataset.n())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        indices.shuffle(&mut rng);
        // Stagger the starting fold per class to balance overall fold sizes.
        let offset = (class - 1) % k;
        for (i, idx) in indices.into_iter().enumerate() {
            folds[(offset + i) % k].push(idx);
        }
    }

    let n = dataset.n();
    let mut result = Vec::with_capacity(k);
    for fold in &mut folds {
        fold.sort_unstable();
    }
    for f in 0..k {
        let test = folds[f].clone();
        let mut train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
        train.sort_unstable();
        result.push((train, test));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ViewMatrix;
    use ndarray::Array2;

    fn toy_dataset(labels: Vec<usize>, c: usize) -> MultiViewDataset {
        let n = labels.len();
        let data = Array2::from_shape_fn((2, n), |(i, j)| (i * n + j) as f64);
        MultiViewDataset::new(vec![ViewMatrix::new(1, data).unwrap()], labels, c).unwrap()
    }

    #[test]
    fn exact_divisibility_gives_one_per_class_per_fold() {
        let labels = vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
        let ds = toy_dataset(labels, 2);
        let folds = stratified_split(&ds, 5, 0).unwrap();
        for (_, test) in &folds {
            assert_eq!(test.len(), 2);
            let c1 = test.iter().filter(|&&i| ds.labels[i] == 1).count();
            assert_eq!(c1, 1);
        }
    }

    #[test]
    fn same_seed_is_deterministic() {
        let labels = vec![1, 2, 1, 2, 1, 2, 1, 2, 3, 3, 3, 3];
        let ds = toy_dataset(labels, 3);
        let a = stratified_split(&ds, 2, 42).unwrap();
        let b = stratified_split(&ds, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&ds, 2, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn folds_partition_all_samples() {
        let labels = vec![1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2];
        let ds = toy_dataset(labels, 2);
        let folds = stratified_split(&ds, 4, 7).unwrap();
        let mut seen = vec![false; ds.n()];
        for (train, test) in &folds {
            for &i in test {
                assert!(!seen[i], "index {i} appears in two test folds");
                seen[i] = true;
                assert!(!train.contains(&i));
            }
            assert_eq!(train.len() + test.len(), ds.n());
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn per_class_spread_at_most_one() {
        let labels = vec![1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 3, 3, 3];
        let ds = toy_dataset(labels, 3);
        let folds = stratified_split(&ds, 3, 9).unwrap();
        for class in 1..=3 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|(_, test)| test.iter().filter(|&&i| ds.labels[i] == class).count())
                .collect();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "class {class} spread {counts:?}");
        }
    }

    #[test]
    fn class_smaller_than_k_is_rejected() {
        let labels = vec![1, 1, 1, 2];
        let ds = toy_dataset(labels, 2);
        let err = stratified_split(&ds, 3, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::ClassSmallerThanFolds {
                class: 2,
                count: 1,
                k: 3
            }
        ));
    }
}
