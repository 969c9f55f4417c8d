//! Test-time scoring and the two multi-view decision rules.
//!
//! Each view scores a test point as `x^T A_v B` (plus the stored indicator
//! means when bias is on); the Sum rule fuses rows by their mean and takes
//! the argmax, Voting lets each view cast an argmax vote and splits
//! probability mass uniformly over tied winners.

use ndarray::{Array1, Array2, Axis};

use crate::data::apply_preprocess;
use crate::solver::{FullRankModel, LowRankModel};
use crate::{Error, Result};

/// Per-view class scores of one test point: row `v` holds view `v`'s
/// score vector over the `c` classes.
pub type ScoreMatrix = Array2<f64>;

/// Score one test point under a low-rank model. Raw per-view vectors are
/// preprocessed with the model's stored state; with bias on, the stored
/// indicator means are added back (the centered-score completion of the
/// trained bias).
pub fn score_views(
    x_views: &[Array1<f64>],
    model: &LowRankModel,
    bias: bool,
) -> Result<ScoreMatrix> {
    let x_pre = apply_preprocess(x_views, &model.preprocess)?;
    let c = model.class_count();
    let mut scores = Array2::zeros((model.view_count(), c));
    for (v, x) in x_pre.iter().enumerate() {
        let row = model.b.t().dot(&model.a[v].t().dot(x));
        for k in 0..c {
            scores[[v, k]] = row[k]
                + if bias {
                    model.preprocess.indicator_means[k]
                } else {
                    0.0
                };
        }
    }
    Ok(scores)
}

/// Full-rank counterpart of [`score_views`].
pub fn score_views_full(
    x_views: &[Array1<f64>],
    model: &FullRankModel,
    bias: bool,
) -> Result<ScoreMatrix> {
    let x_pre = apply_preprocess(x_views, &model.preprocess)?;
    let c = model.class_count();
    let mut scores = Array2::zeros((model.view_count(), c));
    for (v, x) in x_pre.iter().enumerate() {
        let row = model.bv[v].t().dot(x);
        for k in 0..c {
            scores[[v, k]] = row[k]
                + if bias {
                    model.preprocess.indicator_means[k]
                } else {
                    0.0
                };
        }
    }
    Ok(scores)
}

/// First index attaining the maximum, so ties go to the lowest class.
fn argmax_lowest(values: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Sum rule: fuse per-view rows by their mean (the minimizer of the summed
/// squared distances) and take the argmax. Returns the 1-based label and
/// the fused score vector.
pub fn predict_sum(scores: &ScoreMatrix) -> (usize, Array1<f64>) {
    let fused = scores.mean_axis(Axis(0)).expect("at least one view");
    (argmax_lowest(&fused) + 1, fused)
}

/// Voting rule: each view votes its argmax; the returned distribution puts
/// mass `1/t` on each of the `t` classes tied for most votes.
pub fn predict_voting(scores: &ScoreMatrix) -> Array1<f64> {
    let c = scores.ncols();
    let mut votes = vec![0usize; c];
    for row in scores.rows() {
        votes[argmax_lowest(&row.to_owned())] += 1;
    }
    let top = *votes.iter().max().expect("at least one class");
    let winners: Vec<usize> = (0..c).filter(|&k| votes[k] == top).collect();
    let mass = 1.0 / winners.len() as f64;
    let mut out = Array1::zeros(c);
    for k in winners {
        out[k] = mass;
    }
    out
}

/// One classified sample: a hard 1-based label (Sum rule) or a probability
/// vector over classes (Voting rule).
#[derive(Debug, Clone)]
pub enum Prediction {
    Hard(usize),
    Soft(Array1<f64>),
}

/// Mean probability mass assigned to the true class; hard labels count 1/0.
pub fn accuracy(predictions: &[Prediction], truth: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (pred, &label) in predictions.iter().zip(truth) {
        total += match pred {
            Prediction::Hard(l) => f64::from(u8::from(*l == label)),
            Prediction::Soft(p) => {
                if label == 0 || label > p.len() {
                    return Err(Error::LabelOutOfRange { label, c: p.len() });
                }
                p[label - 1]
            }
        };
    }
    Ok(total / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_class_indicator, MultiViewDataset, PreprocessState, ViewMatrix};
    use crate::solver::{fit_low_rank, FitOptions, LambdaStrategy};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy_model() -> LowRankModel {
        LowRankModel {
            a: vec![array![[1.0], [0.0]]],
            b: array![[2.0, -1.0]],
            biases: vec![array![0.3, 0.7]],
            rank: 1,
            lambdas: vec![1.0],
            preprocess: PreprocessState {
                view_means: vec![vec![2.0, -1.0]],
                indicator_means: vec![0.3, 0.7],
                row_norms: vec![vec![1.0, 1.0]],
                normalized: false,
                centered: true,
            },
            eigenvalues: vec![1.0],
            objective: 0.0,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn score_at_training_mean_returns_indicator_means() {
        let model = toy_model();
        // Raw x equal to the stored mean centers to zero.
        let scores = score_views(&[array![2.0, -1.0]], &model, true).unwrap();
        assert_abs_diff_eq!(scores[[0, 0]], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(scores[[0, 1]], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn zero_coefficients_bias_off_scores_zero() {
        let mut model = toy_model();
        model.b = array![[0.0, 0.0]];
        let scores = score_views(&[array![5.0, 5.0]], &model, false).unwrap();
        assert_eq!(scores, Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn perfect_fit_training_point_recovers_indicator_row() {
        let ds = MultiViewDataset::new(
            vec![ViewMatrix::new(1, array![[0.5, -0.5, 0.5, -0.5]]).unwrap()],
            vec![1, 2, 1, 2],
            2,
        )
        .unwrap();
        let ind = build_class_indicator(&ds.labels, 2).unwrap();
        let opts = FitOptions {
            normalize: false,
            ..FitOptions::default()
        };
        let model =
            fit_low_rank(&ds, &ind, 1, &LambdaStrategy::Fixed(vec![0.0]), &opts).unwrap();
        for i in 0..4 {
            let scores = score_views(&ds.sample(i), &model, true).unwrap();
            for k in 0..2 {
                assert_abs_diff_eq!(scores[[0, k]], ind.y[[i, k]], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn sum_rule_averages_rows() {
        let scores = array![[0.2, 0.8], [0.4, 0.6]];
        let (label, fused) = predict_sum(&scores);
        assert_eq!(label, 2);
        assert_abs_diff_eq!(fused[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(fused[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn sum_rule_single_view_is_plain_argmax() {
        let scores = array![[0.1, -0.4, 0.3]];
        let (label, fused) = predict_sum(&scores);
        assert_eq!(label, 3);
        assert_abs_diff_eq!(fused[2], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn sum_rule_ties_go_to_lowest_class() {
        let scores = array![[0.5, 0.5, 0.1]];
        let (label, _) = predict_sum(&scores);
        assert_eq!(label, 1);
    }

    #[test]
    fn fused_vector_minimizes_summed_squared_distance() {
        let scores = array![[0.2, 0.8, -0.1], [0.4, 0.6, 0.5], [-0.3, 0.2, 0.9]];
        let (_, fused) = predict_sum(&scores);
        let objective = |y: &Array1<f64>| -> f64 {
            scores
                .rows()
                .into_iter()
                .map(|row| (&row.to_owned() - y).iter().map(|d| d * d).sum::<f64>())
                .sum()
        };
        let at_mean = objective(&fused);
        // The gradient 2 sum_v (y - row_v) vanishes at the mean...
        let grad = (&fused * 3.0 - &scores.sum_axis(Axis(0))) * 2.0;
        for g in grad.iter() {
            assert!(g.abs() <= 1e-12);
        }
        // ...and nearby points never do better.
        use rand::prelude::*;
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let perturbed = Array1::from_shape_fn(3, |k| {
                fused[k] + rng.random_range(-0.5_f64..0.5)
            });
            assert!(objective(&perturbed) >= at_mean - 1e-12);
        }
    }

    #[test]
    fn voting_majority_and_ties() {
        // Three views, votes 1, 1, 2: class 1 with certainty.
        let scores = array![[0.9, 0.1], [0.8, 0.2], [0.3, 0.7]];
        let probs = predict_voting(&scores);
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.0, epsilon = 1e-15);

        // Two views disagreeing: 0.5 each.
        let scores = array![[0.9, 0.1], [0.2, 0.8]];
        let probs = predict_voting(&scores);
        assert_abs_diff_eq!(probs[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.5, epsilon = 1e-15);

        // Single view degenerates to its argmax.
        let scores = array![[0.2, 0.5, 0.3]];
        let probs = predict_voting(&scores);
        assert_abs_diff_eq!(probs[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn accuracy_hard_and_soft() {
        let preds = vec![Prediction::Hard(1), Prediction::Hard(2)];
        assert_abs_diff_eq!(accuracy(&preds, &[1, 2]).unwrap(), 1.0, epsilon = 1e-15);

        let preds = vec![
            Prediction::Soft(array![0.5, 0.5]),
            Prediction::Hard(2),
        ];
        assert_abs_diff_eq!(accuracy(&preds, &[1, 1]).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn accuracy_rejects_empty_and_mismatched() {
        assert!(accuracy(&[], &[]).is_err());
        let preds = vec![Prediction::Hard(1)];
        assert!(accuracy(&preds, &[1, 2]).is_err());
    }

    #[test]
    fn constant_shift_keeps_sum_label() {
        let scores = array![[0.2, 0.8], [0.4, 0.6]];
        let (label, _) = predict_sum(&scores);
        let shifted = &scores + 3.75;
        let (label2, _) = predict_sum(&shifted);
        assert_eq!(label, label2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_voting_output_is_distribution(
            rows in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4), 1..6)
        ) {
            let v = rows.len();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let scores = Array2::from_shape_vec((v, 4), flat).unwrap();
            let probs = predict_voting(&scores);
            prop_assert!(probs.iter().all(|p| *p >= 0.0));
            prop_assert!((probs.sum() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn prop_sum_and_voting_agree_on_unanimous_views(
            rows in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 3), 1..5)
        ) {
            let v = rows.len();
            let flat: Vec<f64> = rows.clone().into_iter().flatten().collect();
            let scores = Array2::from_shape_vec((v, 3), flat).unwrap();
            let per_view: Vec<usize> = scores
                .rows()
                .into_iter()
                .map(|r| argmax_lowest(&r.to_owned()))
                .collect();
            prop_assume!(per_view.windows(2).all(|w| w[0] == w[1]));
            let (sum_label, _) = predict_sum(&scores);
            let probs = predict_voting(&scores);
            prop_assert_eq!(sum_label, per_view[0] + 1);
            prop_assert!((probs[per_view[0]] - 1.0).abs() <= 1e-12);
        }
    }
}
