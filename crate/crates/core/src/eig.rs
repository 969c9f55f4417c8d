//! Dense symmetric linear algebra kernel.
//!
//! Householder tridiagonalization plus implicit-shift QL for the standard
//! symmetric eigenproblem (adapted from the JAMA/EISPACK lineage), a Cholesky
//! factorization, and on top of both the symmetric-definite generalized
//! eigenproblem `S_b a = lambda S_t a`. Matrices here are dense and small
//! (at most a few thousand rows), so no sparse or iterative paths exist.

use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Relative asymmetry tolerated before an input is rejected.
const SYMMETRY_RTOL: f64 = 1e-10;
/// Relative eigenvalue threshold separating the null space of a singular metric.
const NULLSPACE_RTOL: f64 = 1e-10;
/// Relative pivot threshold below which a Cholesky factorization is abandoned.
const CHOLESKY_RTOL: f64 = 1e-12;

/// Eigenvalues sorted non-increasing with column-aligned eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Eigenvalues, descending.
    pub values: Array1<f64>,
    /// Columns are eigenvectors, same order as `values`.
    pub vectors: Array2<f64>,
    /// True when the vectors satisfy `A^T S_t A = I` for the metric they
    /// were computed against; false for a plain Euclidean decomposition.
    pub metric_normalized: bool,
    /// Dimensions discarded because the metric was singular (0 otherwise).
    pub dropped_dimensions: usize,
}

/// Full eigendecomposition of a symmetric real matrix.
///
/// The input is symmetrized as `(M + M^T)/2` after checking that the
/// asymmetry is within `1e-10` relative; vectors come back orthonormal in
/// the Euclidean metric with each column's leading nonzero entry positive.
pub fn symmetric_eig(m: &Array2<f64>) -> Result<EigenPairs> {
    let sym = validate_symmetric(m, "symmetric_eig input")?;
    let (values, vectors) = decompose_symmetric(&sym);
    let mut pairs = EigenPairs {
        values,
        vectors,
        metric_normalized: false,
        dropped_dimensions: 0,
    };
    fix_signs(&mut pairs.vectors);
    Ok(pairs)
}

/// Top-`s` generalized eigenpairs of `(S_b, S_t)` with `S_t`-orthonormal vectors.
///
/// When `S_t` admits a Cholesky factorization `L L^T` the problem is reduced
/// to the standard symmetric one for `L^{-1} S_b L^{-T}` and vectors mapped
/// back through `L^{-T}`. A singular `S_t` falls back to its spectral
/// pseudo-inverse: components of the spectrum below `1e-10` times the largest
/// eigenvalue are dropped, the problem is restricted to the remaining
/// subspace, and the number of dropped dimensions is reported on the result.
pub fn generalized_eig(s_b: &Array2<f64>, s_t: &Array2<f64>, s: usize) -> Result<EigenPairs> {
    if s == 0 {
        return Err(Error::InvalidParameter(
            "eigenpair count must be at least 1".into(),
        ));
    }
    if s_b.dim() != s_t.dim() {
        return Err(Error::DimensionMismatch(format!(
            "S_b is {:?} but S_t is {:?}",
            s_b.dim(),
            s_t.dim()
        )));
    }
    let sb = validate_symmetric(s_b, "S_b")?;
    let st = validate_symmetric(s_t, "S_t")?;
    let n = sb.nrows();

    let mut pairs = match cholesky_lower(&st) {
        Some(l) => {
            if s > n {
                return Err(Error::RankTooLarge {
                    requested: s,
                    usable: n,
                });
            }
            // C = L^{-1} S_b L^{-T}; S_b symmetric makes C symmetric.
            let w = solve_lower(&l, &sb);
            let c = symmetrize(&solve_lower(&l, &w.t().to_owned()));
            let (values, vectors) = decompose_symmetric(&c);
            let top = vectors.slice(ndarray::s![.., ..s]).to_owned();
            let mapped = solve_lower_transpose(&l, &top);
            EigenPairs {
                values: values.slice(ndarray::s![..s]).to_owned(),
                vectors: mapped,
                metric_normalized: true,
                dropped_dimensions: 0,
            }
        }
        None => generalized_eig_singular(&sb, &st, s)?,
    };
    fix_signs(&mut pairs.vectors);
    Ok(pairs)
}

/// Pseudo-inverse path for a singular (PSD) metric.
fn generalized_eig_singular(sb: &Array2<f64>, st: &Array2<f64>, s: usize) -> Result<EigenPairs> {
    let n = st.nrows();
    let (values, vectors) = decompose_symmetric(st);
    let lam_max = values[0];
    if !(lam_max > 0.0) {
        return Err(Error::SingularSystem(
            "total scatter matrix has no positive spectrum".into(),
        ));
    }
    let eps = NULLSPACE_RTOL * lam_max;
    let lam_min = values[n - 1];
    if lam_min < -eps {
        return Err(Error::IndefiniteMetric { value: lam_min });
    }
    let usable: Vec<usize> = (0..n).filter(|&i| values[i] > eps).collect();
    let m = usable.len();
    if s > m {
        return Err(Error::RankTooLarge {
            requested: s,
            usable: m,
        });
    }
    // Whitening basis W = U_+ D_+^{-1/2}; restriction keeps A^T S_t A = I.
    let mut w = Array2::zeros((n, m));
    for (col, &i) in usable.iter().enumerate() {
        let scale = 1.0 / values[i].sqrt();
        for row in 0..n {
            w[[row, col]] = vectors[[row, i]] * scale;
        }
    }
    let c = symmetrize(&w.t().dot(sb).dot(&w));
    let (cv, cvecs) = decompose_symmetric(&c);
    let top = cvecs.slice(ndarray::s![.., ..s]);
    Ok(EigenPairs {
        values: cv.slice(ndarray::s![..s]).to_owned(),
        vectors: w.dot(&top),
        metric_normalized: true,
        dropped_dimensions: n - m,
    })
}

/// Lower-triangular Cholesky factor of an SPD matrix, or `None` when a pivot
/// falls below `1e-12` relative to the largest diagonal entry.
pub(crate) fn cholesky_lower(m: &Array2<f64>) -> Option<Array2<f64>> {
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let max_diag = (0..n).map(|i| m[[i, i]].abs()).fold(0.0_f64, f64::max);
    let tol = CHOLESKY_RTOL * max_diag.max(f64::MIN_POSITIVE);
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= tol {
            return None;
        }
        let pivot = d.sqrt();
        l[[j, j]] = pivot;
        for i in (j + 1)..n {
            let mut v = m[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / pivot;
        }
    }
    Some(l)
}

/// `L^{-1} B` by forward substitution, column by column.
pub(crate) fn solve_lower(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut v = x[[i, col]];
            for k in 0..i {
                v -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = v / l[[i, i]];
        }
    }
    x
}

/// `L^{-T} B` by back substitution, column by column.
pub(crate) fn solve_lower_transpose(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut v = x[[i, col]];
            for k in (i + 1)..n {
                v -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = v / l[[i, i]];
        }
    }
    x
}

/// Solve `M X = B` for SPD `M`, or `None` when `M` is not positive definite.
pub(crate) fn solve_spd(m: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let l = cholesky_lower(m)?;
    let y = solve_lower(&l, b);
    Some(solve_lower_transpose(&l, &y))
}

/// Solve `M X = B` for a symmetric `M` through its spectral pseudo-inverse,
/// dropping components below `1e-10` relative to the largest |eigenvalue|.
pub(crate) fn solve_symmetric_pseudo(m: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let sym = symmetrize(m);
    let (values, vectors) = decompose_symmetric(&sym);
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let eps = NULLSPACE_RTOL * scale.max(f64::MIN_POSITIVE);
    let proj = vectors.t().dot(b);
    let mut scaled = proj;
    for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
        let v = values[i];
        let inv = if v.abs() > eps { 1.0 / v } else { 0.0 };
        row.mapv_inplace(|x| x * inv);
    }
    vectors.dot(&scaled)
}

fn validate_symmetric(m: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {:?}, not square",
            m.dim()
        )));
    }
    if m.is_empty() {
        return Err(Error::EmptyInput(what.into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let asym = (0..m.nrows())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (m[[i, j]] - m[[j, i]]).abs())
        .fold(0.0_f64, f64::max);
    if asym > SYMMETRY_RTOL * scale.max(1.0) {
        return Err(Error::NotSymmetric);
    }
    Ok(symmetrize(m))
}

fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Make the leading nonzero coordinate of every column positive.
fn fix_signs(vectors: &mut Array2<f64>) {
    for mut col in vectors.columns_mut() {
        let max_abs = col.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if max_abs == 0.0 {
            continue;
        }
        let lead = col.iter().find(|v| v.abs() > 1e-12 * max_abs);
        if let Some(&v) = lead {
            if v < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
    }
}

/// Eigendecomposition of an exactly symmetric matrix, values descending.
///
/// Householder reduction to tridiagonal form followed by the implicit-shift
/// QL iteration, both following the JAMA formulation.
fn decompose_symmetric(m: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = m.nrows();
    let mut vectors = m.clone();
    let mut values = Array1::zeros(n);
    let mut work = vec![0.0; n];
    tridiagonalize(&mut values, &mut vectors, &mut work);
    tridiagonal_ql(&mut values, &mut vectors, &mut work);
    // QL leaves the spectrum ascending; flip to descending.
    let mut rev_values = Array1::zeros(n);
    let mut rev_vectors = Array2::zeros((n, n));
    for i in 0..n {
        rev_values[i] = values[n - 1 - i];
        for r in 0..n {
            rev_vectors[[r, i]] = vectors[[r, n - 1 - i]];
        }
    }
    (rev_values, rev_vectors)
}

// Symmetric Householder reduction to tridiagonal form, after the Algol
// procedure tred2 (Bowdler, Martin, Reinsch, Wilkinson) via JAMA.
#[allow(clippy::needless_range_loop)]
fn tridiagonalize(eval: &mut Array1<f64>, evec: &mut Array2<f64>, work: &mut [f64]) {
    let n = eval.len();
    for j in 0..n {
        eval[j] = evec[[n - 1, j]];
    }

    for i in (1..n).rev() {
        // Scale to avoid under/overflow.
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += f64::abs(eval[k]);
        }
        if scale == 0.0 {
            work[i] = eval[i - 1];
            for j in 0..i {
                eval[j] = evec[[i - 1, j]];
                evec[[i, j]] = 0.0;
                evec[[j, i]] = 0.0;
            }
        } else {
            // Generate Householder vector.
            for k in 0..i {
                eval[k] /= scale;
                h += eval[k] * eval[k];
            }
            let mut f = eval[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            work[i] = scale * g;
            h -= f * g;
            eval[i - 1] = f - g;
            for j in 0..i {
                work[j] = 0.0;
            }

            // Apply similarity transformation to remaining columns.
            for j in 0..i {
                f = eval[j];
                evec[[j, i]] = f;
                g = work[j] + evec[[j, j]] * f;
                for k in (j + 1)..i {
                    g += evec[[k, j]] * eval[k];
                    work[k] += evec[[k, j]] * f;
                }
                work[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                work[j] /= h;
                f += work[j] * eval[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                work[j] -= hh * eval[j];
            }
            for j in 0..i {
                f = eval[j];
                g = work[j];
                for k in j..i {
                    let orig = evec[[k, j]];
                    evec[[k, j]] = orig - (f * work[k] + g * eval[k]);
                }
                eval[j] = evec[[i - 1, j]];
                evec[[i, j]] = 0.0;
            }
        }
        eval[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n.saturating_sub(1) {
        let orig = evec[[i, i]];
        evec[[n - 1, i]] = orig;
        evec[[i, i]] = 1.0;
        let h = eval[i + 1];
        if h != 0.0 {
            for k in 0..(i + 1) {
                eval[k] = evec[[k, i + 1]] / h;
            }
            for j in 0..(i + 1) {
                let mut g = 0.0;
                for k in 0..(i + 1) {
                    g += evec[[k, i + 1]] * evec[[k, j]];
                }
                for k in 0..(i + 1) {
                    let orig = evec[[k, j]];
                    evec[[k, j]] = orig - g * eval[k];
                }
            }
        }
        for k in 0..(i + 1) {
            evec[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        eval[j] = evec[[n - 1, j]];
        evec[[n - 1, j]] = 0.0;
    }
    evec[[n - 1, n - 1]] = 1.0;
    work[0] = 0.0;
}

// Symmetric tridiagonal QL with implicit shifts, after the Algol procedure
// tql2 via JAMA. Leaves eigenvalues ascending.
#[allow(clippy::many_single_char_names)]
fn tridiagonal_ql(eval: &mut Array1<f64>, evec: &mut Array2<f64>, work: &mut [f64]) {
    let n = eval.len();
    for i in 1..n {
        work[i - 1] = work[i];
    }
    work[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    for l in 0..n {
        // Find small subdiagonal element.
        tst1 = tst1.max(f64::abs(eval[l]) + f64::abs(work[l]));
        let mut m = l;
        while m < n {
            if f64::abs(work[m]) <= f64::EPSILON * tst1 {
                break;
            }
            m += 1;
        }

        // If m == l, eval[l] is an eigenvalue; otherwise iterate.
        if m > l {
            loop {
                // Compute implicit shift.
                let mut g = eval[l];
                let mut p = (eval[l + 1] - g) / (2.0 * work[l]);
                let mut r = f64::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                eval[l] = work[l] / (p + r);
                eval[l + 1] = work[l] * (p + r);
                let eval_lp1 = eval[l + 1];
                let mut h = g - eval[l];
                for i in (l + 2)..n {
                    eval[i] -= h;
                }
                f += h;

                // Implicit QL transformation.
                p = eval[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let work_lp1 = work[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * work[i];
                    h = c * p;
                    r = f64::hypot(p, work[i]);
                    work[i + 1] = s * r;
                    s = work[i] / r;
                    c = p / r;
                    p = c * eval[i] - s * g;
                    eval[i + 1] = h + s * (c * g + s * eval[i]);

                    // Accumulate transformation.
                    for k in 0..n {
                        h = evec[[k, i + 1]];
                        evec[[k, i + 1]] = s * evec[[k, i]] + c * h;
                        evec[[k, i]] = c * evec[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * work_lp1 * work[l] / eval_lp1;
                work[l] = s * p;
                eval[l] = c * p;

                if f64::abs(work[l]) <= f64::EPSILON * tst1 {
                    break;
                }
            }
        }
        eval[l] += f;
        work[l] = 0.0;
    }

    // Selection sort ascending, moving vectors along.
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = eval[i];
        for j in (i + 1)..n {
            if eval[j] < p {
                k = j;
                p = eval[j];
            }
        }
        if k != i {
            eval[k] = eval[i];
            eval[i] = p;
            for j in 0..n {
                let tmp = evec[[j, i]];
                evec[[j, i]] = evec[[j, k]];
                evec[[j, k]] = tmp;
            }
        }
    }
}
