//! Closed-form multi-view regression solvers.
//!
//! Assembles the stacked scatter pair, solves the generalized eigenproblem
//! for the per-view subspace maps `A_v`, recovers the shared coefficients
//! `B` and the per-view biases, and evaluates the fitted objective and
//! residual. The unconstrained per-view full-rank model lives here too as
//! the rank-`c` baseline.

mod io;

pub use io::{load_model, save_model, ModelFile};

use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::data::{
    fit_preprocess, ClassIndicator, MultiViewDataset, PreprocessOptions, PreprocessState,
    ViewMatrix,
};
use crate::eig::{generalized_eig, solve_spd, solve_symmetric_pseudo, symmetric_eig};
use crate::{Error, Result};

/// Eigenvalues of the per-view Gram matrix below this relative threshold
/// count as zero for the P90 rule.
const SPECTRUM_RTOL: f64 = 1e-12;

/// How each view's regularization weight is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaStrategy {
    /// The average eigenvalue of a row-normalized Gram matrix: 1 per view.
    One,
    /// The eigenvalue sum `Tr(X X^T)`.
    Sum,
    /// The eigenvalue at the 90% position of the descending nonzero spectrum.
    P90,
    /// Explicit per-view weights.
    Fixed(Vec<f64>),
}

impl FromStr for LambdaStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Self::One),
            "sum" => Ok(Self::Sum),
            "p90" => Ok(Self::P90),
            other => {
                if let Some(rest) = other.strip_prefix("fixed:") {
                    let values = rest
                        .split(',')
                        .map(|tok| {
                            tok.trim().parse::<f64>().map_err(|_| {
                                Error::Usage(format!("bad lambda value {tok:?} in {other:?}"))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(Self::Fixed(values))
                } else {
                    Err(Error::Usage(format!(
                        "unknown lambda strategy {other:?} (expected one|sum|p90|fixed:v1,v2,...)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for LambdaStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::One => write!(f, "one"),
            Self::Sum => write!(f, "sum"),
            Self::P90 => write!(f, "p90"),
            Self::Fixed(values) => {
                let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(f, "fixed:{}", joined.join(","))
            }
        }
    }
}

/// Resolve per-view regularization weights on the preprocessed views.
pub fn resolve_lambda(views: &[ViewMatrix], strategy: &LambdaStrategy) -> Result<Vec<f64>> {
    match strategy {
        LambdaStrategy::One => Ok(vec![1.0; views.len()]),
        LambdaStrategy::Sum => Ok(views
            .iter()
            .map(|v| v.data.iter().map(|x| x * x).sum())
            .collect()),
        LambdaStrategy::P90 => views.iter().map(p90_eigenvalue).collect(),
        LambdaStrategy::Fixed(values) => {
            if values.len() != views.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} fixed lambdas for {} views",
                    values.len(),
                    views.len()
                )));
            }
            if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "lambda must be >= 0, got {bad}"
                )));
            }
            Ok(values.clone())
        }
    }
}

fn p90_eigenvalue(view: &ViewMatrix) -> Result<f64> {
    let gram = view.data.dot(&view.data.t());
    let eig = symmetric_eig(&gram)?;
    let max_ev = eig.values[0];
    let nonzero: Vec<f64> = eig
        .values
        .iter()
        .copied()
        .filter(|&v| v > SPECTRUM_RTOL * max_ev.max(0.0))
        .collect();
    let m = nonzero.len();
    if m == 0 {
        return Err(Error::SingularSystem(format!(
            "view {}: P90 undefined on an all-zero spectrum",
            view.view_id
        )));
    }
    // ceil(0.9 m) in exact integer arithmetic, 1-based.
    let idx = (9 * m).div_ceil(10);
    Ok(nonzero[idx - 1])
}

/// The stacked scatter pair of the generalized eigenproblem: `S_b` from the
/// indicator cross-products and block-diagonal regularized `S_t`.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub s_b: Array2<f64>,
    pub s_t: Array2<f64>,
    /// Start row of each view's block in the stacked dimension.
    pub block_offsets: Vec<usize>,
}

impl ScatterPair {
    pub fn total_dim(&self) -> usize {
        self.s_t.nrows()
    }

    pub fn block_range(&self, v: usize) -> std::ops::Range<usize> {
        let start = self.block_offsets[v];
        let end = self
            .block_offsets
            .get(v + 1)
            .copied()
            .unwrap_or_else(|| self.total_dim());
        start..end
    }
}

/// Stacked `X Y`: each view's `X_v Y` block on top of the next.
pub fn stack_xy(views: &[ViewMatrix], y: &Array2<f64>) -> Array2<f64> {
    let total: usize = views.iter().map(|v| v.p()).sum();
    let mut xy = Array2::zeros((total, y.ncols()));
    let mut off = 0;
    for view in views {
        let block = view.data.dot(y);
        xy.slice_mut(ndarray::s![off..off + view.p(), ..])
            .assign(&block);
        off += view.p();
    }
    xy
}

/// Assemble `S_b = (XY)(XY)^T` and block-diagonal `S_t` with per-view ridge
/// terms; inputs are expected centered and lambdas resolved.
pub fn build_scatter(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
) -> Result<ScatterPair> {
    if views.is_empty() {
        return Err(Error::EmptyInput("no views".into()));
    }
    if lambdas.len() != views.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} lambdas for {} views",
            lambdas.len(),
            views.len()
        )));
    }
    for view in views {
        if view.n() != y.nrows() {
            return Err(Error::ViewDimensionMismatch {
                view_id: view.view_id,
                expected: y.nrows(),
                got: view.n(),
            });
        }
    }
    let total: usize = views.iter().map(|v| v.p()).sum();
    let xy = stack_xy(views, y);
    let s_b = xy.dot(&xy.t());

    let mut s_t = Array2::zeros((total, total));
    let mut block_offsets = Vec::with_capacity(views.len());
    let mut off = 0;
    for (view, &lambda) in views.iter().zip(lambdas) {
        block_offsets.push(off);
        let p = view.p();
        let mut gram = view.data.dot(&view.data.t());
        for i in 0..p {
            gram[[i, i]] += lambda;
        }
        s_t.slice_mut(ndarray::s![off..off + p, off..off + p])
            .assign(&gram);
        off += p;
    }
    Ok(ScatterPair {
        s_b,
        s_t,
        block_offsets,
    })
}

/// Fit configuration: bias (and with it centering), row normalization, and
/// whether singular systems abort instead of falling back to pseudo-inverses.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub bias: bool,
    pub normalize: bool,
    pub strict: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bias: true,
            normalize: true,
            strict: false,
        }
    }
}

/// Rank-`s` multi-view model: per-view subspace maps, shared coefficients,
/// per-view biases, and the preprocessing state they were fit under.
#[derive(Debug, Clone)]
pub struct LowRankModel {
    pub a: Vec<Array2<f64>>,
    pub b: Array2<f64>,
    pub biases: Vec<Array1<f64>>,
    pub rank: usize,
    pub lambdas: Vec<f64>,
    pub preprocess: PreprocessState,
    pub eigenvalues: Vec<f64>,
    pub objective: f64,
    pub warnings: Vec<String>,
}

impl LowRankModel {
    pub fn view_count(&self) -> usize {
        self.a.len()
    }

    pub fn class_count(&self) -> usize {
        self.b.ncols()
    }

    /// Per-view coefficient product `A_v B`.
    pub fn coefficients(&self, v: usize) -> Array2<f64> {
        self.a[v].dot(&self.b)
    }
}

/// Per-view full-rank ridge model, the rank-`c` baseline.
#[derive(Debug, Clone)]
pub struct FullRankModel {
    pub bv: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub lambdas: Vec<f64>,
    pub preprocess: PreprocessState,
    pub warnings: Vec<String>,
}

impl FullRankModel {
    pub fn view_count(&self) -> usize {
        self.bv.len()
    }

    pub fn class_count(&self) -> usize {
        self.bv[0].ncols()
    }
}

/// Fit the rank-`s` model: preprocess, resolve lambdas, build scatter, take
/// the top-`s` generalized eigenvectors, recover `B` and the biases.
pub fn fit_low_rank(
    dataset: &MultiViewDataset,
    indicator: &ClassIndicator,
    s: usize,
    strategy: &LambdaStrategy,
    opts: &FitOptions,
) -> Result<LowRankModel> {
    let c = dataset.c;
    if s == 0 || s >= c {
        return Err(Error::InvalidRank { s, c });
    }
    if indicator.y.nrows() != dataset.n() {
        return Err(Error::DimensionMismatch(format!(
            "indicator has {} rows for {} samples",
            indicator.y.nrows(),
            dataset.n()
        )));
    }

    let prep = fit_preprocess(
        dataset,
        indicator,
        PreprocessOptions {
            normalize: opts.normalize,
            center: opts.bias,
        },
    )?;
    let mut warnings = prep.warnings.clone();
    let lambdas = resolve_lambda(&prep.views, strategy)?;
    let scatter = build_scatter(&prep.views, &prep.y, &lambdas)?;
    let eig = generalized_eig(&scatter.s_b, &scatter.s_t, s).map_err(|e| match e {
        Error::RankTooLarge { requested, usable } => Error::SingularSystem(format!(
            "rank {requested} exceeds the usable scatter subspace of dimension {usable}"
        )),
        other => other,
    })?;
    if eig.dropped_dimensions > 0 {
        if opts.strict {
            return Err(Error::SingularSystem(format!(
                "total scatter is rank-deficient by {} dimensions",
                eig.dropped_dimensions
            )));
        }
        warnings.push(format!(
            "total scatter rank-deficient: dropped {} dimensions via spectral pseudo-inverse",
            eig.dropped_dimensions
        ));
    }

    let xy = stack_xy(&prep.views, &prep.y);
    let b = compute_b(&eig.vectors, &scatter, &xy)?;
    let dims: Vec<usize> = prep.views.iter().map(|v| v.p()).collect();
    let a = split_blocks(&eig.vectors, &scatter.block_offsets, &dims);
    let biases = if opts.bias {
        compute_bias(&a, &b, &prep.state)?
    } else {
        vec![Array1::zeros(c); dataset.v()]
    };
    let objective = objective_value(&prep.views, &prep.y, &a, &b, &lambdas);

    Ok(LowRankModel {
        a,
        b,
        biases,
        rank: s,
        lambdas,
        preprocess: prep.state,
        eigenvalues: eig.values.to_vec(),
        objective,
        warnings,
    })
}

/// Shared coefficients `B = (A^T S_t A)^{-1} A^T X Y`; with metric-normalized
/// `A` the inner matrix is the identity and `B` reduces to `A^T X Y`.
pub fn compute_b(
    a: &Array2<f64>,
    scatter: &ScatterPair,
    xy: &Array2<f64>,
) -> Result<Array2<f64>> {
    if a.nrows() != scatter.total_dim() || xy.nrows() != scatter.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows, XY has {}, scatter dimension is {}",
            a.nrows(),
            xy.nrows(),
            scatter.total_dim()
        )));
    }
    let g = a.t().dot(&scatter.s_t).dot(a);
    let h = a.t().dot(xy);
    solve_spd(&g, &h).ok_or_else(|| {
        Error::SingularSystem("A^T S_t A is singular; eigenvector block is degenerate".into())
    })
}

/// Per-view bias vectors `f_v = y_mean - B^T A_v^T x_mean_v`.
pub fn compute_bias(
    a: &[Array2<f64>],
    b: &Array2<f64>,
    preprocess: &PreprocessState,
) -> Result<Vec<Array1<f64>>> {
    if a.len() != preprocess.view_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} subspace maps for {} views in the preprocess state",
            a.len(),
            preprocess.view_count()
        )));
    }
    let y_mean = Array1::from(preprocess.indicator_means.clone());
    let mut biases = Vec::with_capacity(a.len());
    for (v, a_v) in a.iter().enumerate() {
        if a_v.nrows() != preprocess.view_means[v].len() {
            return Err(Error::ViewDimensionMismatch {
                view_id: v + 1,
                expected: preprocess.view_means[v].len(),
                got: a_v.nrows(),
            });
        }
        let x_mean = Array1::from(preprocess.view_means[v].clone());
        let projected = b.t().dot(&a_v.t().dot(&x_mean));
        biases.push(&y_mean - &projected);
    }
    Ok(biases)
}

fn split_blocks(a: &Array2<f64>, offsets: &[usize], dims: &[usize]) -> Vec<Array2<f64>> {
    offsets
        .iter()
        .zip(dims)
        .map(|(&off, &p)| a.slice(ndarray::s![off..off + p, ..]).to_owned())
        .collect()
}

fn objective_value(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    a: &[Array2<f64>],
    b: &Array2<f64>,
    lambdas: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (v, view) in views.iter().enumerate() {
        let ab = a[v].dot(b);
        let resid = y - &view.data.t().dot(&ab);
        let fit: f64 = resid.iter().map(|r| r * r).sum();
        let reg: f64 = ab.iter().map(|x| x * x).sum();
        total += fit + lambdas[v] * reg;
    }
    total
}

/// Evaluate the fitted objective on centered quantities.
pub fn objective_j1(
    model: &LowRankModel,
    views: &[ViewMatrix],
    y: &Array2<f64>,
) -> Result<f64> {
    check_eval_shapes(model.view_count(), model.class_count(), views, y)?;
    Ok(objective_value(
        views,
        y,
        &model.a,
        &model.b,
        &model.lambdas,
    ))
}

/// Label-matrix residual summed over views, regularizer excluded.
pub fn residual_r(model: &LowRankModel, views: &[ViewMatrix], y: &Array2<f64>) -> Result<f64> {
    check_eval_shapes(model.view_count(), model.class_count(), views, y)?;
    let mut total = 0.0;
    for (v, view) in views.iter().enumerate() {
        let ab = model.a[v].dot(&model.b);
        let resid = y - &view.data.t().dot(&ab);
        total += resid.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(total)
}

fn check_eval_shapes(
    v: usize,
    c: usize,
    views: &[ViewMatrix],
    y: &Array2<f64>,
) -> Result<()> {
    if views.len() != v {
        return Err(Error::DimensionMismatch(format!(
            "model has {v} views, input has {}",
            views.len()
        )));
    }
    if y.ncols() != c {
        return Err(Error::DimensionMismatch(format!(
            "model has {c} classes, indicator has {}",
            y.ncols()
        )));
    }
    for view in views {
        if view.n() != y.nrows() {
            return Err(Error::ViewDimensionMismatch {
                view_id: view.view_id,
                expected: y.nrows(),
                got: view.n(),
            });
        }
    }
    Ok(())
}

/// Fit the unconstrained per-view baseline by solving each view's ridge
/// normal equations.
pub fn fit_full_rank(
    dataset: &MultiViewDataset,
    indicator: &ClassIndicator,
    strategy: &LambdaStrategy,
    opts: &FitOptions,
) -> Result<FullRankModel> {
    if indicator.y.nrows() != dataset.n() {
        return Err(Error::DimensionMismatch(format!(
            "indicator has {} rows for {} samples",
            indicator.y.nrows(),
            dataset.n()
        )));
    }
    let prep = fit_preprocess(
        dataset,
        indicator,
        PreprocessOptions {
            normalize: opts.normalize,
            center: opts.bias,
        },
    )?;
    let mut warnings = prep.warnings.clone();
    let lambdas = resolve_lambda(&prep.views, strategy)?;

    let mut bv = Vec::with_capacity(prep.views.len());
    for (view, &lambda) in prep.views.iter().zip(&lambdas) {
        let p = view.p();
        let mut gram = view.data.dot(&view.data.t());
        for i in 0..p {
            gram[[i, i]] += lambda;
        }
        let rhs = view.data.dot(&prep.y);
        match solve_spd(&gram, &rhs) {
            Some(solution) => bv.push(solution),
            None => {
                if opts.strict {
                    return Err(Error::SingularSystem(format!(
                        "view {}: normal equations singular with lambda = {lambda}",
                        view.view_id
                    )));
                }
                warnings.push(format!(
                    "view {}: singular normal equations, using spectral pseudo-inverse",
                    view.view_id
                ));
                bv.push(solve_symmetric_pseudo(&gram, &rhs));
            }
        }
    }

    let biases = if opts.bias {
        let y_mean = Array1::from(prep.state.indicator_means.clone());
        prep.views
            .iter()
            .enumerate()
            .map(|(v, _)| {
                let x_mean = Array1::from(prep.state.view_means[v].clone());
                &y_mean - &bv[v].t().dot(&x_mean)
            })
            .collect()
    } else {
        vec![Array1::zeros(dataset.c); dataset.v()]
    };

    Ok(FullRankModel {
        bv,
        biases,
        lambdas,
        preprocess: prep.state,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_class_indicator;
    use crate::oracle::{gd_minimize_lowrank, objective_coefficients, OracleConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn raw_view(id: usize, data: Array2<f64>) -> ViewMatrix {
        ViewMatrix::new(id, data).unwrap()
    }

    fn random_dataset(
        rng: &mut ChaCha8Rng,
        n: usize,
        c: usize,
        dims: &[usize],
    ) -> MultiViewDataset {
        let views = dims
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                raw_view(
                    i + 1,
                    Array2::from_shape_fn((p, n), |_| rng.sample::<f64, _>(StandardNormal)),
                )
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| (i % c) + 1).collect();
        MultiViewDataset::new(views, labels, c).unwrap()
    }

    #[test]
    fn lambda_one_gives_unit_weights() {
        let views = vec![raw_view(1, array![[1.0, 2.0]]), raw_view(2, array![[3.0, 4.0]])];
        let lambdas = resolve_lambda(&views, &LambdaStrategy::One).unwrap();
        assert_eq!(lambdas, vec![1.0, 1.0]);
    }

    #[test]
    fn lambda_sum_on_row_normalized_data_is_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_fn((4, 9), |_| rng.sample::<f64, _>(StandardNormal));
        let (normalized, _) = crate::data::normalize_rows(&raw_view(1, data));
        let lambdas = resolve_lambda(&[normalized], &LambdaStrategy::Sum).unwrap();
        assert_abs_diff_eq!(lambdas[0], 4.0, epsilon = 1e-10);
    }

    #[test]
    fn lambda_p90_picks_ninth_of_ten() {
        // X X^T = diag(10, 9, ..., 1): the 90% position of 10 nonzero
        // eigenvalues is the 9th, which is 2.
        let mut data = Array2::zeros((10, 10));
        for i in 0..10 {
            data[[i, i]] = ((10 - i) as f64).sqrt();
        }
        let lambdas = resolve_lambda(&[raw_view(1, data)], &LambdaStrategy::P90).unwrap();
        assert_abs_diff_eq!(lambdas[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn lambda_p90_rejects_zero_spectrum() {
        let data = Array2::zeros((3, 4));
        let err = resolve_lambda(&[raw_view(1, data)], &LambdaStrategy::P90).unwrap_err();
        assert!(matches!(err, Error::SingularSystem(_)));
    }

    #[test]
    fn lambda_fixed_is_verbatim_and_validated() {
        let views = vec![raw_view(1, array![[1.0, 2.0]]), raw_view(2, array![[3.0, 4.0]])];
        let lambdas =
            resolve_lambda(&views, &LambdaStrategy::Fixed(vec![0.25, 7.0])).unwrap();
        assert_eq!(lambdas, vec![0.25, 7.0]);
        assert!(resolve_lambda(&views, &LambdaStrategy::Fixed(vec![1.0])).is_err());
        assert!(resolve_lambda(&views, &LambdaStrategy::Fixed(vec![1.0, -1.0])).is_err());
    }

    #[test]
    fn lambda_strategy_parses_and_prints() {
        assert_eq!("one".parse::<LambdaStrategy>().unwrap(), LambdaStrategy::One);
        assert_eq!(
            "fixed:0.5,2".parse::<LambdaStrategy>().unwrap(),
            LambdaStrategy::Fixed(vec![0.5, 2.0])
        );
        assert!("p95".parse::<LambdaStrategy>().is_err());
        assert_eq!(LambdaStrategy::P90.to_string(), "p90");
    }

    #[test]
    fn scatter_identity_example() {
        let views = vec![raw_view(1, Array2::eye(2))];
        let y: Array2<f64> = Array2::eye(2);
        let scatter = build_scatter(&views, &y, &[1.0]).unwrap();
        assert_abs_diff_eq!(scatter.s_b, Array2::eye(2), epsilon = 1e-14);
        assert_abs_diff_eq!(scatter.s_t, Array2::eye(2) * 2.0, epsilon = 1e-14);
        assert_eq!(scatter.block_offsets, vec![0]);
    }

    #[test]
    fn scatter_off_diagonal_blocks_are_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let views = vec![
            raw_view(
                1,
                Array2::from_shape_fn((3, 6), |_| rng.sample::<f64, _>(StandardNormal)),
            ),
            raw_view(
                2,
                Array2::from_shape_fn((2, 6), |_| rng.sample::<f64, _>(StandardNormal)),
            ),
        ];
        let y = Array2::from_shape_fn((6, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let scatter = build_scatter(&views, &y, &[0.5, 0.5]).unwrap();
        for i in 0..3 {
            for j in 3..5 {
                assert_eq!(scatter.s_t[[i, j]], 0.0);
                assert_eq!(scatter.s_t[[j, i]], 0.0);
            }
        }
        assert_eq!(scatter.block_range(0), 0..3);
        assert_eq!(scatter.block_range(1), 3..5);
    }

    #[test]
    fn centered_indicator_bounds_scatter_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&mut rng, 12, 3, &[4, 3]);
        let ind = build_class_indicator(&ds.labels, 3).unwrap();
        let prep =
            fit_preprocess(&ds, &ind, crate::data::PreprocessOptions::default()).unwrap();
        let lambdas = resolve_lambda(&prep.views, &LambdaStrategy::One).unwrap();
        let scatter = build_scatter(&prep.views, &prep.y, &lambdas).unwrap();
        let spectrum = symmetric_eig(&scatter.s_b).unwrap();
        let above = spectrum.values.iter().filter(|&&v| v > 1e-10).count();
        assert!(above <= 2, "rank {above} exceeds c-1 = 2");
    }

    /// The exactly collinear single-view instance: one feature row of
    /// alternating +-0.5 against two balanced classes.
    fn collinear_dataset() -> (MultiViewDataset, ClassIndicator) {
        let ds = MultiViewDataset::new(
            vec![raw_view(1, array![[0.5, -0.5, 0.5, -0.5]])],
            vec![1, 2, 1, 2],
            2,
        )
        .unwrap();
        let ind = build_class_indicator(&ds.labels, 2).unwrap();
        (ds, ind)
    }

    #[test]
    fn perfect_fit_reaches_zero_objective_with_known_coefficients() {
        let (ds, ind) = collinear_dataset();
        let opts = FitOptions {
            normalize: false,
            ..FitOptions::default()
        };
        let model = fit_low_rank(
            &ds,
            &ind,
            1,
            &LambdaStrategy::Fixed(vec![0.0]),
            &opts,
        )
        .unwrap();
        assert!(model.objective.abs() <= 1e-12, "J1 = {}", model.objective);
        let ab = model.coefficients(0);
        let s2 = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(ab[[0, 0]], s2, epsilon = 1e-10);
        assert_abs_diff_eq!(ab[[0, 1]], -s2, epsilon = 1e-10);
    }

    #[test]
    fn fitted_objective_equals_indicator_energy_minus_eigenvalue_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 15, 3, &[4, 2]);
        let ind = build_class_indicator(&ds.labels, 3).unwrap();
        let model =
            fit_low_rank(&ds, &ind, 2, &LambdaStrategy::One, &FitOptions::default()).unwrap();
        let prep = ds_preprocessed(&ds, &ind, &model);
        let y_energy: f64 = prep.1.iter().map(|v| v * v).sum();
        let expected = ds.v() as f64 * y_energy - model.eigenvalues.iter().sum::<f64>();
        assert_abs_diff_eq!(
            model.objective,
            expected,
            epsilon = 1e-8 * expected.abs().max(1.0)
        );
    }

    fn ds_preprocessed(
        ds: &MultiViewDataset,
        ind: &ClassIndicator,
        model: &LowRankModel,
    ) -> (Vec<ViewMatrix>, Array2<f64>) {
        let views = model.preprocess.transform_views(&ds.views).unwrap();
        let y = model.preprocess.transform_indicator(&ind.y).unwrap();
        (views, y)
    }

    #[test]
    fn stored_objective_matches_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = random_dataset(&mut rng, 12, 3, &[3, 3]);
        let ind = build_class_indicator(&ds.labels, 3).unwrap();
        let model =
            fit_low_rank(&ds, &ind, 1, &LambdaStrategy::One, &FitOptions::default()).unwrap();
        let (views, y) = ds_preprocessed(&ds, &ind, &model);
        let j1 = objective_j1(&model, &views, &y).unwrap();
        assert_abs_diff_eq!(j1, model.objective, epsilon = 1e-10 * j1.abs().max(1.0));
    }

    #[test]
    fn zero_indicator_gives_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let views = vec![raw_view(
            1,
            Array2::from_shape_fn((3, 8), |_| rng.sample::<f64, _>(StandardNormal)),
        )];
        let y: Array2<f64> = Array2::zeros((8, 2));
        let lambdas = vec![1.0];
        let scatter = build_scatter(&views, &y, &lambdas).unwrap();
        // Use an arbitrary well-conditioned block for A.
        let a = Array2::from_shape_fn((3, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let xy = stack_xy(&views, &y);
        let b = compute_b(&a, &scatter, &xy).unwrap();
        assert!(b.iter().all(|v| v.abs() <= 1e-14));
    }

    #[test]
    fn coefficients_invariant_under_basis_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ds = random_dataset(&mut rng, 14, 4, &[4, 3]);
        let ind = build_class_indicator(&ds.labels, 4).unwrap();
        let model =
            fit_low_rank(&ds, &ind, 2, &LambdaStrategy::One, &FitOptions::default()).unwrap();
        let (views, y) = ds_preprocessed(&ds, &ind, &model);
        let scatter = build_scatter(&views, &y, &model.lambdas).unwrap();
        let xy = stack_xy(&views, &y);

        // Stack A back together, apply a random invertible mix, recompute B.
        let total: usize = model.a.iter().map(|a| a.nrows()).sum();
        let mut stacked = Array2::zeros((total, model.rank));
        let mut off = 0;
        for a in &model.a {
            stacked
                .slice_mut(ndarray::s![off..off + a.nrows(), ..])
                .assign(a);
            off += a.nrows();
        }
        let r = array![[1.4, -0.3], [0.8, 0.9]];
        let mixed = stacked.dot(&r);
        let b_mixed = compute_b(&mixed, &scatter, &xy).unwrap();
        let mixed_blocks = split_blocks(&mixed, &scatter.block_offsets, &[4, 3]);
        for v in 0..2 {
            let original = model.a[v].dot(&model.b);
            let remixed = mixed_blocks[v].dot(&b_mixed);
            let err = (&original - &remixed)
                .iter()
                .map(|x| x.abs())
                .fold(0.0_f64, f64::max);
            assert!(err <= 1e-8, "view {v} coefficient drift {err}");
        }
    }

    #[test]
    fn bias_formula_edge_cases() {
        let state = PreprocessState {
            view_means: vec![vec![0.0, 0.0]],
            indicator_means: vec![0.25, 0.75],
            row_norms: vec![vec![1.0, 1.0]],
            normalized: false,
            centered: true,
        };
        // Zero coefficients: bias is the indicator mean.
        let a = vec![Array2::zeros((2, 1))];
        let b = Array2::zeros((1, 2));
        let biases = compute_bias(&a, &b, &state).unwrap();
        assert_abs_diff_eq!(biases[0][0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(biases[0][1], 0.75, epsilon = 1e-15);

        // Pre-centered data (zero means): same outcome for any coefficients.
        let a = vec![array![[1.0], [2.0]]];
        let b = array![[3.0, -1.0]];
        let biases = compute_bias(&a, &b, &state).unwrap();
        assert_abs_diff_eq!(biases[0][0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(biases[0][1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn perturbing_optimal_bias_increases_raw_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ds = random_dataset(&mut rng, 10, 3, &[3, 2]);
        let ind = build_class_indicator(&ds.labels, 3).unwrap();
        let opts = FitOptions {
            normalize: false,
            ..FitOptions::default()
        };
        let model = fit_low_rank(&ds, &ind, 2, &LambdaStrategy::One, &opts).unwrap();
        let coeffs: Vec<Array2<f64>> = (0..ds.v()).map(|v| model.coefficients(v)).collect();
        let base = objective_coefficients(
            &ds.views,
            &ind.y,
            &coeffs,
            &model.biases,
            &model.lambdas,
        );
        for v in 0..ds.v() {
            for k in 0..3 {
                for delta in [0.01_f64, -0.01, 0.1, -0.1] {
                    let mut biases = model.biases.clone();
                    biases[v][k] += delta;
                    let perturbed = objective_coefficients(
                        &ds.views,
                        &ind.y,
                        &coeffs,
                        &biases,
                        &model.lambdas,
                    );
                    // Quadratic in the bias: increase is exactly n * delta^2.
                    let expected = ds.n() as f64 * delta * delta;
                    assert!(perturbed > base, "bias perturbation did not increase J0");
                    assert_abs_diff_eq!(
                        perturbed - base,
                        expected,
                        epsilon = 1e-8 * expected.max(1.0)
                    );
                }
            }
        }
    }

    #[test]
    fn objective_non_increasing_in_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ds = random_dataset(&mut rng, 20, 4, &[5, 4]);
        let ind = build_class_indicator(&ds.labels, 4).unwrap();
        let mut last = f64::INFINITY;
        for s in 1..4 {
            let model =
                fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &FitOptions::default())
                    .unwrap();
            assert!(
                model.objective <= last + 1e-10,
                "J1 increased from {last} to {} at s={s}",
                model.objective
            );
            last = model.objective;
        }
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ds = random_dataset(&mut rng, 9, 3, &[3]);
        let ind = build_class_indicator(&ds.labels, 3).unwrap();
        for s in [0, 3, 4] {
            let err = fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &FitOptions::default())
                .unwrap_err();
            assert!(matches!(err, Error::InvalidRank { .. }));
        }
    }

    #[test]
    fn closed_form_matches_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for trial in 0..3 {
            let c = 3;
            let ds = random_dataset(&mut rng, 12, c, &[4, 3]);
            let ind = build_class_indicator(&ds.labels, c).unwrap();
            let opts = FitOptions {
                normalize: false,
                ..FitOptions::default()
            };
            let model = fit_low_rank(&ds, &ind, 2, &LambdaStrategy::One, &opts).unwrap();
            let cfg = OracleConfig {
                seed: 100 + trial,
                ..OracleConfig::default()
            };
            let oracle =
                gd_minimize_lowrank(&ds.views, &ind.y, 2, &model.lambdas, &cfg).unwrap();
            let closed = model.objective;
            let descended = oracle.objective();
            assert!(
                closed <= descended + 1e-6,
                "closed form {closed} above oracle {descended}"
            );
            let rel = (closed - descended).abs() / closed.abs().max(1.0);
            assert!(rel <= 1e-4, "relative gap {rel}");
        }
    }

    #[test]
    fn fullrank_identity_design_recovers_targets() {
        let n = 4;
        let ds = MultiViewDataset::new(
            vec![raw_view(1, Array2::eye(n))],
            vec![1, 2, 1, 2],
            2,
        )
        .unwrap();
        let ind = build_class_indicator(&ds.labels, 2).unwrap();
        let opts = FitOptions {
            bias: false,
            normalize: false,
            strict: false,
        };
        let model =
            fit_full_rank(&ds, &ind, &LambdaStrategy::Fixed(vec![0.0]), &opts).unwrap();
        assert_abs_diff_eq!(model.bv[0], ind.y, epsilon = 1e-10);

        let model =
            fit_full_rank(&ds, &ind, &LambdaStrategy::Fixed(vec![1.0]), &opts).unwrap();
        let half = &ind.y * 0.5;
        assert_abs_diff_eq!(model.bv[0], half, epsilon = 1e-10);
    }

    #[test]
    fn fullrank_solution_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ds = random_dataset(&mut rng, 11, 3, &[4, 2]);
        let ind = build_class_indicator(&ds.labels, 3).unwrap();
        let opts = FitOptions {
            normalize: false,
            ..FitOptions::default()
        };
        let model = fit_full_rank(&ds, &ind, &LambdaStrategy::One, &opts).unwrap();
        let max_grad = crate::oracle::fullrank_gradient_max_norm(
            &ds.views,
            &ind.y,
            &model.lambdas,
            &model.bv,
            &model.biases,
        )
        .unwrap();
        assert!(max_grad <= 1e-8, "gradient max-norm {max_grad}");
    }

    #[test]
    fn singular_linear_regression_falls_back_with_warning() {
        // p > n makes X X^T singular when lambda = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = Array2::from_shape_fn((6, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let ds = MultiViewDataset::new(vec![raw_view(1, data)], vec![1, 2, 1, 2], 2).unwrap();
        let ind = build_class_indicator(&ds.labels, 2).unwrap();
        let opts = FitOptions {
            normalize: false,
            ..FitOptions::default()
        };
        let model =
            fit_full_rank(&ds, &ind, &LambdaStrategy::Fixed(vec![0.0]), &opts).unwrap();
        assert!(!model.warnings.is_empty());

        let strict = FitOptions {
            strict: true,
            ..opts
        };
        assert!(
            fit_full_rank(&ds, &ind, &LambdaStrategy::Fixed(vec![0.0]), &strict).is_err()
        );
    }

    #[test]
    fn trace_identity_holds_at_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let ds = random_dataset(&mut rng, 16, 4, &[3, 3, 2]);
        let ind = build_class_indicator(&ds.labels, 4).unwrap();
        for s in 1..4 {
            let model =
                fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &FitOptions::default())
                    .unwrap();
            let (views, y) = ds_preprocessed(&ds, &ind, &model);
            let scatter = build_scatter(&views, &y, &model.lambdas).unwrap();
            let xy = stack_xy(&views, &y);
            // J1 + Tr(G^{-1} H Y Y^T H^T) must equal sum_v ||Y^c||^2 where
            // the trace term reduces to ||B||^2-style energy through B.
            let total: usize = model.a.iter().map(|a| a.nrows()).sum();
            let mut stacked = Array2::zeros((total, model.rank));
            let mut off = 0;
            for a in &model.a {
                stacked
                    .slice_mut(ndarray::s![off..off + a.nrows(), ..])
                    .assign(a);
                off += a.nrows();
            }
            let g = stacked.t().dot(&scatter.s_t).dot(&stacked);
            let hy = stacked.t().dot(&xy);
            let g_inv_hy = crate::eig::solve_spd(&g, &hy).unwrap();
            let trace_term: f64 = (0..model.rank)
                .map(|i| {
                    (0..ds.c)
                        .map(|k| g_inv_hy[[i, k]] * hy[[i, k]])
                        .sum::<f64>()
                })
                .sum();
            let y_energy: f64 = y.iter().map(|v| v * v).sum::<f64>() * ds.v() as f64;
            assert_abs_diff_eq!(
                model.objective + trace_term,
                y_energy,
                epsilon = 1e-8 * y_energy.max(1.0)
            );
        }
    }
}
