//! Independent brute-force verifier for the closed-form solvers.
//!
//! Minimizes the raw multi-view objectives by plain gradient descent with
//! backtracking and random restarts, and checks analytic gradients against
//! central finite differences. Deliberately shares no code with the `eig`
//! and `solver` modules: agreement between the two routes is the evidence.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::ViewMatrix;
use crate::{Error, Result};

const ARMIJO_SLOPE: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;
/// Consecutive small relative improvements required before stopping.
const STALL_WINDOW: usize = 8;

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub max_iters: usize,
    /// Relative objective-change stopping threshold.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_iters: 30_000,
            tol: 1e-10,
            seed: 0,
            restarts: 5,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.restarts == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(
                "oracle needs max_iters >= 1, restarts >= 1, tol > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Low-rank descent output: per-view subspace maps, shared coefficients,
/// per-view biases and the accepted-objective trace of the best restart.
#[derive(Debug, Clone)]
pub struct LowRankDescent {
    pub a: Vec<Array2<f64>>,
    pub b: Array2<f64>,
    pub f: Vec<Array1<f64>>,
    pub trace: Vec<f64>,
}

impl LowRankDescent {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace never empty")
    }
}

#[derive(Debug, Clone)]
pub struct FullRankDescent {
    pub bv: Vec<Array2<f64>>,
    pub f: Vec<Array1<f64>>,
    pub trace: Vec<f64>,
}

impl FullRankDescent {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace never empty")
    }
}

/// Sum over views of `||Y - (X^T C + e f^T)||_F^2 + lambda ||C||_F^2` for
/// per-view coefficient matrices and biases: the raw bias-carrying objective
/// that both the factored and the full-rank models minimize in their own
/// parameterizations.
pub fn objective_coefficients(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    coeffs: &[Array2<f64>],
    biases: &[Array1<f64>],
    lambdas: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (v, view) in views.iter().enumerate() {
        let fitted = view.data.t().dot(&coeffs[v]);
        let mut sq = 0.0;
        for i in 0..y.nrows() {
            for k in 0..y.ncols() {
                let r = y[[i, k]] - fitted[[i, k]] - biases[v][k];
                sq += r * r;
            }
        }
        let reg: f64 = coeffs[v].iter().map(|x| x * x).sum();
        total += sq + lambdas[v] * reg;
    }
    total
}

struct LowRankShape {
    dims: Vec<usize>,
    s: usize,
    c: usize,
}

impl LowRankShape {
    fn len(&self) -> usize {
        let a: usize = self.dims.iter().map(|p| p * self.s).sum();
        a + self.s * self.c + self.dims.len() * self.c
    }

    fn a_view<'a>(&self, x: &'a [f64], v: usize) -> ArrayView2<'a, f64> {
        let mut off = 0;
        for p in &self.dims[..v] {
            off += p * self.s;
        }
        ArrayView2::from_shape((self.dims[v], self.s), &x[off..off + self.dims[v] * self.s])
            .expect("packed shape")
    }

    fn b_view<'a>(&self, x: &'a [f64]) -> ArrayView2<'a, f64> {
        let off: usize = self.dims.iter().map(|p| p * self.s).sum();
        ArrayView2::from_shape((self.s, self.c), &x[off..off + self.s * self.c])
            .expect("packed shape")
    }

    fn f_slice<'a>(&self, x: &'a [f64], v: usize) -> &'a [f64] {
        let off: usize =
            self.dims.iter().map(|p| p * self.s).sum::<usize>() + self.s * self.c + v * self.c;
        &x[off..off + self.c]
    }
}

fn lowrank_objective(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    shape: &LowRankShape,
    x: &[f64],
) -> f64 {
    let b = shape.b_view(x);
    let mut total = 0.0;
    for (v, view) in views.iter().enumerate() {
        let a = shape.a_view(x, v);
        let ab = a.dot(&b);
        let fitted = view.data.t().dot(&ab);
        let f = shape.f_slice(x, v);
        let mut sq = 0.0;
        for i in 0..y.nrows() {
            for k in 0..y.ncols() {
                let r = y[[i, k]] - fitted[[i, k]] - f[k];
                sq += r * r;
            }
        }
        let reg: f64 = ab.iter().map(|x| x * x).sum();
        total += sq + lambdas[v] * reg;
    }
    total
}

fn lowrank_gradient(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    shape: &LowRankShape,
    x: &[f64],
) -> Vec<f64> {
    let b = shape.b_view(x);
    let mut grad = vec![0.0; x.len()];
    let mut grad_b: Array2<f64> = Array2::zeros((shape.s, shape.c));
    let mut a_off = 0;
    for (v, view) in views.iter().enumerate() {
        let a = shape.a_view(x, v);
        let ab = a.dot(&b);
        let mut resid = y - &view.data.t().dot(&ab);
        let f = shape.f_slice(x, v);
        for k in 0..shape.c {
            resid.column_mut(k).mapv_inplace(|r| r - f[k]);
        }
        // dA = -2 X R B^T + 2 lambda A B B^T
        let xr = view.data.dot(&resid);
        let da = xr.dot(&b.t()) * -2.0 + ab.dot(&b.t()) * (2.0 * lambdas[v]);
        let p = shape.dims[v];
        for r in 0..p {
            for col in 0..shape.s {
                grad[a_off + r * shape.s + col] = da[[r, col]];
            }
        }
        a_off += p * shape.s;
        // dB accumulates -2 A^T X R + 2 lambda A^T A B
        grad_b = grad_b + a.t().dot(&xr) * -2.0 + a.t().dot(&ab) * (2.0 * lambdas[v]);
        // df = -2 R^T e (column sums)
        let f_off = shape.dims.iter().map(|p| p * shape.s).sum::<usize>()
            + shape.s * shape.c
            + v * shape.c;
        for k in 0..shape.c {
            grad[f_off + k] = -2.0 * resid.column(k).sum();
        }
    }
    let b_off: usize = shape.dims.iter().map(|p| p * shape.s).sum();
    for r in 0..shape.s {
        for col in 0..shape.c {
            grad[b_off + r * shape.c + col] = grad_b[[r, col]];
        }
    }
    grad
}

/// Gradient descent on the factored objective over `(A_v, B, F_v)` jointly,
/// best of `restarts` random initializations.
pub fn gd_minimize_lowrank(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    s: usize,
    lambdas: &[f64],
    config: &OracleConfig,
) -> Result<LowRankDescent> {
    config.validate()?;
    let c = y.ncols();
    if s == 0 || s >= c {
        return Err(Error::InvalidRank { s, c });
    }
    check_shapes(views, y, lambdas)?;
    let shape = LowRankShape {
        dims: views.iter().map(|v| v.p()).collect(),
        s,
        c,
    };

    let objective = |x: &[f64]| lowrank_objective(views, y, lambdas, &shape, x);
    let gradient = |x: &[f64]| lowrank_gradient(views, y, lambdas, &shape, x);
    // Per-block curvature bounds: 2(||X||^2 + lambda)||B||^2 for each A block,
    // 2 sum_v ||A_v||^2 (||X_v||^2 + lambda_v) for B, 2n for the biases.
    let x2: Vec<f64> = views
        .iter()
        .map(|v| v.data.iter().map(|x| x * x).sum())
        .collect();
    let n = y.nrows() as f64;
    let scale = |x: &[f64], g: &[f64]| {
        let b = shape.b_view(x);
        let b2: f64 = b.iter().map(|v| v * v).sum::<f64>().max(1e-8);
        let mut d = vec![0.0; g.len()];
        let mut off = 0;
        let mut h_b = 0.0;
        for (v, &p) in shape.dims.iter().enumerate() {
            let a = shape.a_view(x, v);
            let a2: f64 = a.iter().map(|v| v * v).sum();
            h_b += a2 * (x2[v] + lambdas[v]);
            let h_a = (2.0 * (x2[v] + lambdas[v]) * b2).max(1e-8);
            for i in 0..p * shape.s {
                d[off + i] = g[off + i] / h_a;
            }
            off += p * shape.s;
        }
        let h_b = (2.0 * h_b).max(1e-8);
        for i in 0..shape.s * shape.c {
            d[off + i] = g[off + i] / h_b;
        }
        off += shape.s * shape.c;
        let h_f = 2.0 * n;
        for i in off..g.len() {
            d[i] = g[i] / h_f;
        }
        d
    };

    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
    for restart in 0..config.restarts {
        let init = random_point(shape.len(), config.seed.wrapping_add(restart as u64));
        let (x, trace) = descend(&objective, &gradient, &scale, init, config)?;
        let better = match &best {
            Some((_, t)) => trace.last() < t.last(),
            None => true,
        };
        if better {
            best = Some((x, trace));
        }
    }
    let (x, trace) = best.expect("restarts >= 1");

    let b = shape.b_view(&x).to_owned();
    let a = (0..views.len())
        .map(|v| shape.a_view(&x, v).to_owned())
        .collect();
    let f = (0..views.len())
        .map(|v| Array1::from(shape.f_slice(&x, v).to_vec()))
        .collect();
    Ok(LowRankDescent { a, b, f, trace })
}

struct FullRankShape {
    dims: Vec<usize>,
    c: usize,
}

impl FullRankShape {
    fn len(&self) -> usize {
        self.dims.iter().map(|p| p * self.c).sum::<usize>() + self.dims.len() * self.c
    }

    fn b_view<'a>(&self, x: &'a [f64], v: usize) -> ArrayView2<'a, f64> {
        let mut off = 0;
        for p in &self.dims[..v] {
            off += p * self.c;
        }
        ArrayView2::from_shape((self.dims[v], self.c), &x[off..off + self.dims[v] * self.c])
            .expect("packed shape")
    }

    fn f_slice<'a>(&self, x: &'a [f64], v: usize) -> &'a [f64] {
        let off: usize = self.dims.iter().map(|p| p * self.c).sum::<usize>() + v * self.c;
        &x[off..off + self.c]
    }
}

fn fullrank_objective(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    shape: &FullRankShape,
    x: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (v, view) in views.iter().enumerate() {
        let bv = shape.b_view(x, v);
        let fitted = view.data.t().dot(&bv);
        let f = shape.f_slice(x, v);
        let mut sq = 0.0;
        for i in 0..y.nrows() {
            for k in 0..y.ncols() {
                let r = y[[i, k]] - fitted[[i, k]] - f[k];
                sq += r * r;
            }
        }
        let reg: f64 = bv.iter().map(|x| x * x).sum();
        total += sq + lambdas[v] * reg;
    }
    total
}

fn fullrank_gradient(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    shape: &FullRankShape,
    x: &[f64],
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut b_off = 0;
    for (v, view) in views.iter().enumerate() {
        let bv = shape.b_view(x, v);
        let mut resid = y - &view.data.t().dot(&bv);
        let f = shape.f_slice(x, v);
        for k in 0..shape.c {
            resid.column_mut(k).mapv_inplace(|r| r - f[k]);
        }
        let db = view.data.dot(&resid) * -2.0 + &bv * (2.0 * lambdas[v]);
        let p = shape.dims[v];
        for r in 0..p {
            for col in 0..shape.c {
                grad[b_off + r * shape.c + col] = db[[r, col]];
            }
        }
        b_off += p * shape.c;
        let f_off: usize = shape.dims.iter().map(|p| p * shape.c).sum::<usize>() + v * shape.c;
        for k in 0..shape.c {
            grad[f_off + k] = -2.0 * resid.column(k).sum();
        }
    }
    grad
}

/// Gradient descent on the per-view full-rank objective over `(B_v, F_v)`.
pub fn gd_minimize_fullrank(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    config: &OracleConfig,
) -> Result<FullRankDescent> {
    config.validate()?;
    check_shapes(views, y, lambdas)?;
    let shape = FullRankShape {
        dims: views.iter().map(|v| v.p()).collect(),
        c: y.ncols(),
    };
    let objective = |x: &[f64]| fullrank_objective(views, y, lambdas, &shape, x);
    let gradient = |x: &[f64]| fullrank_gradient(views, y, lambdas, &shape, x);
    let x2: Vec<f64> = views
        .iter()
        .map(|v| v.data.iter().map(|x| x * x).sum())
        .collect();
    let n = y.nrows() as f64;
    let scale = |_x: &[f64], g: &[f64]| {
        let mut d = vec![0.0; g.len()];
        let mut off = 0;
        for (v, &p) in shape.dims.iter().enumerate() {
            let h = (2.0 * (x2[v] + lambdas[v])).max(1e-8);
            for i in 0..p * shape.c {
                d[off + i] = g[off + i] / h;
            }
            off += p * shape.c;
        }
        let h_f = 2.0 * n;
        for i in off..g.len() {
            d[i] = g[i] / h_f;
        }
        d
    };

    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
    for restart in 0..config.restarts {
        let init = random_point(shape.len(), config.seed.wrapping_add(restart as u64));
        let (x, trace) = descend(&objective, &gradient, &scale, init, config)?;
        let better = match &best {
            Some((_, t)) => trace.last() < t.last(),
            None => true,
        };
        if better {
            best = Some((x, trace));
        }
    }
    let (x, trace) = best.expect("restarts >= 1");
    let bv = (0..views.len())
        .map(|v| shape.b_view(&x, v).to_owned())
        .collect();
    let f = (0..views.len())
        .map(|v| Array1::from(shape.f_slice(&x, v).to_vec()))
        .collect();
    Ok(FullRankDescent { bv, f, trace })
}

fn check_shapes(views: &[ViewMatrix], y: &Array2<f64>, lambdas: &[f64]) -> Result<()> {
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
    Ok(())
}

fn random_point(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3)
        .collect()
}

/// Armijo-backtracking descent along a block-scaled gradient direction.
/// The returned trace holds accepted objective values and is non-increasing
/// by construction.
fn descend(
    objective: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> Vec<f64>,
    scale: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    mut x: Vec<f64>,
    config: &OracleConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut fx = objective(&x);
    if !fx.is_finite() {
        return Err(Error::DivergedObjective { iter: 0 });
    }
    let mut trace = vec![fx];
    let mut step = 1.0_f64;
    let mut stall = 0usize;
    for iter in 1..=config.max_iters {
        let g = gradient(&x);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedObjective { iter });
        }
        let d = scale(&x, &g);
        // Directional slope g.d is positive since the scaling is a positive
        // diagonal, so -d is a descent direction.
        let slope: f64 = g.iter().zip(&d).map(|(gi, di)| gi * di).sum();
        if slope.sqrt() <= 1e-15 * (1.0 + fx.abs()) {
            break;
        }
        step = (step * 4.0).min(16.0);
        let mut accepted = false;
        while step >= MIN_STEP {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - step * di).collect();
            let ft = objective(&xt);
            if ft.is_finite() && ft <= fx - ARMIJO_SLOPE * step * slope {
                x = xt;
                let prev = fx;
                fx = ft;
                trace.push(fx);
                accepted = true;
                if (prev - fx).abs() <= config.tol * prev.abs().max(1e-30) {
                    stall += 1;
                } else {
                    stall = 0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || stall >= STALL_WINDOW {
            break;
        }
    }
    Ok((x, trace))
}

/// Central-difference gradient of a scalar function.
pub fn central_difference_gradient<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut work = point.to_vec();
    for i in 0..point.len() {
        work[i] = point[i] + eps;
        let plus = f(&work);
        work[i] = point[i] - eps;
        let minus = f(&work);
        work[i] = point[i];
        grads.push((plus - minus) / (2.0 * eps));
    }
    grads
}

fn max_relative_deviation(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn validate_epsilon(eps: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference epsilon must lie in [1e-7, 1e-4], got {eps}"
        )));
    }
    Ok(())
}

/// Max relative deviation between the analytic low-rank gradient and central
/// finite differences at the given point.
pub fn grad_check_lowrank(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    a: &[Array2<f64>],
    b: &Array2<f64>,
    f: &[Array1<f64>],
    epsilon: f64,
) -> Result<f64> {
    validate_epsilon(epsilon)?;
    check_shapes(views, y, lambdas)?;
    let shape = LowRankShape {
        dims: views.iter().map(|v| v.p()).collect(),
        s: b.nrows(),
        c: y.ncols(),
    };
    let mut point = Vec::with_capacity(shape.len());
    for av in a {
        point.extend(av.iter().copied());
    }
    point.extend(b.iter().copied());
    for fv in f {
        point.extend(fv.iter().copied());
    }
    let objective = |x: &[f64]| lowrank_objective(views, y, lambdas, &shape, x);
    let analytic = lowrank_gradient(views, y, lambdas, &shape, &point);
    let numeric = central_difference_gradient(objective, &point, epsilon);
    Ok(max_relative_deviation(&analytic, &numeric))
}

/// Full-rank counterpart of [`grad_check_lowrank`].
pub fn grad_check_fullrank(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    bv: &[Array2<f64>],
    f: &[Array1<f64>],
    epsilon: f64,
) -> Result<f64> {
    validate_epsilon(epsilon)?;
    check_shapes(views, y, lambdas)?;
    let shape = FullRankShape {
        dims: views.iter().map(|v| v.p()).collect(),
        c: y.ncols(),
    };
    let mut point = Vec::with_capacity(shape.len());
    for b in bv {
        point.extend(b.iter().copied());
    }
    for fv in f {
        point.extend(fv.iter().copied());
    }
    let objective = |x: &[f64]| fullrank_objective(views, y, lambdas, &shape, x);
    let analytic = fullrank_gradient(views, y, lambdas, &shape, &point);
    let numeric = central_difference_gradient(objective, &point, epsilon);
    Ok(max_relative_deviation(&analytic, &numeric))
}

/// Analytic full-rank gradient at a candidate solution, for stationarity
/// checks against the closed form.
pub fn fullrank_gradient_max_norm(
    views: &[ViewMatrix],
    y: &Array2<f64>,
    lambdas: &[f64],
    bv: &[Array2<f64>],
    f: &[Array1<f64>],
) -> Result<f64> {
    check_shapes(views, y, lambdas)?;
    let shape = FullRankShape {
        dims: views.iter().map(|v| v.p()).collect(),
        c: y.ncols(),
    };
    let mut point = Vec::new();
    for b in bv {
        point.extend(b.iter().copied());
    }
    for fv in f {
        point.extend(fv.iter().copied());
    }
    let grad = fullrank_gradient(views, y, lambdas, &shape, &point);
    Ok(grad.iter().fold(0.0_f64, |acc, g| acc.max(g.abs())))
}
