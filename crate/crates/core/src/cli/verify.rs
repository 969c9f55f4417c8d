//! Solver self-verification: closed form against the descent oracle plus
//! the algebraic identities, run on seeded random instances.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{append_extension, ConfigEcho, ExperimentConfig, CONFIG_HEADER};
use crate::data::{build_class_indicator, ClassIndicator, MultiViewDataset, ViewMatrix};
use crate::eig::generalized_eig;
use crate::oracle::{
    gd_minimize_fullrank, gd_minimize_lowrank, fullrank_gradient_max_norm,
    objective_coefficients, OracleConfig,
};
use crate::predict::{predict_sum, predict_voting, score_views};
use crate::solver::{
    build_scatter, compute_b, fit_full_rank, fit_low_rank, stack_xy, FitOptions, LambdaStrategy,
};
use crate::{Error, Result};

/// One named invariant with its measured deviation and tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyCheck {
    fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            pass: measured <= tolerance,
        }
    }

    fn strictly_above(name: &str, measured: f64, floor: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance: floor,
            pass: measured > floor,
        }
    }
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    config: ConfigEcho,
    checks: Vec<VerifyCheck>,
    failed: usize,
}

/// Run the whole suite; nonzero exit (via `Error::VerificationFailed`) when
/// any check fails. Writes the report when `--out` is given and prints one
/// line per check either way.
pub fn run_verify(config: &ExperimentConfig) -> Result<()> {
    let checks = verification_checks(config.seed)?;
    let failed = checks.iter().filter(|c| !c.pass).count();

    for check in &checks {
        println!(
            "{} {} measured={:e} tolerance={:e}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.measured,
            check.tolerance
        );
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());

    if let Some(out) = &config.out {
        let echo = ConfigEcho::new(config, "random");
        let mut csv = format!("{CONFIG_HEADER},check,measured,tolerance,pass\n");
        let prefix = echo.csv_prefix();
        for check in &checks {
            csv.push_str(&format!(
                "{prefix},{},{},{},{}\n",
                check.name, check.measured, check.tolerance, check.pass
            ));
        }
        let report = VerifyReport {
            config: echo,
            checks: checks.clone(),
            failed,
        };
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
        }
        std::fs::write(append_extension(out, "csv"), &csv).map_err(|source| Error::Io {
            path: append_extension(out, "csv"),
            source,
        })?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(append_extension(out, "json"), text).map_err(|source| Error::Io {
            path: append_extension(out, "json"),
            source,
        })?;
    }

    if failed > 0 {
        return Err(Error::VerificationFailed {
            failed,
            total: checks.len(),
        });
    }
    Ok(())
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Random dataset within the desk-scale envelope (n <= 30, v <= 3, p <= 8,
/// c <= 4) with balanced labels.
fn random_instance(rng: &mut ChaCha8Rng) -> (MultiViewDataset, ClassIndicator) {
    let c = rng.random_range(2..=4usize);
    let v = rng.random_range(1..=3usize);
    let n = rng.random_range((4 * c).max(10)..=30usize);
    let views = (0..v)
        .map(|i| {
            let p = rng.random_range(2..=8usize);
            ViewMatrix::new(i + 1, normal_matrix(rng, p, n)).unwrap()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| (i % c) + 1).collect();
    let ds = MultiViewDataset::new(views, labels, c).unwrap();
    let ind = build_class_indicator(&ds.labels, c).unwrap();
    (ds, ind)
}

/// Gauss-Jordan inverse, the deliberately independent route for checking the
/// Cholesky-reduction eigensolver.
fn invert_dense(m: &Array2<f64>) -> Option<Array2<f64>> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv: Array2<f64> = Array2::eye(n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[pivot_row, col]].abs() <= 1e-12 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap([pivot_row, j], [col, j]);
                inv.swap([pivot_row, j], [col, j]);
            }
        }
        let pivot = a[[col, col]];
        for j in 0..n {
            a[[col, j]] /= pivot;
            inv[[col, j]] /= pivot;
        }
        for i in 0..n {
            if i != col {
                let factor = a[[i, col]];
                for j in 0..n {
                    a[[i, j]] -= factor * a[[col, j]];
                    inv[[i, j]] -= factor * inv[[col, j]];
                }
            }
        }
    }
    Some(inv)
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// All named invariants at the given seed.
pub fn verification_checks(seed: u64) -> Result<Vec<VerifyCheck>> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Closed form against the descent oracle, plus the trace identity and
    // objective monotonicity measured on the same fits.
    let mut max_rel_gap = 0.0_f64;
    let mut max_floor_violation = f64::MIN;
    let mut max_trace_dev = 0.0_f64;
    let mut max_monotonicity_violation = f64::MIN;
    let raw_opts = FitOptions {
        normalize: false,
        ..FitOptions::default()
    };
    for trial in 0..10 {
        let (ds, ind) = random_instance(&mut rng);
        let mut last_objective = f64::INFINITY;
        for s in 1..ds.c {
            let model = fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &raw_opts)?;
            // Monotonicity in the rank.
            max_monotonicity_violation = max_monotonicity_violation
                .max(model.objective - last_objective);
            last_objective = model.objective;

            // Trace identity: J1 + sum of kept eigenvalues = v ||Y^c||^2.
            let views = model.preprocess.transform_views(&ds.views)?;
            let y = model.preprocess.transform_indicator(&ind.y)?;
            let y_energy: f64 = y.iter().map(|v| v * v).sum::<f64>() * ds.v() as f64;
            let kept: f64 = model.eigenvalues.iter().sum();
            max_trace_dev = max_trace_dev
                .max((model.objective + kept - y_energy).abs() / y_energy.max(1.0));

            if s == 1 {
                let cfg = OracleConfig {
                    seed: seed.wrapping_add(1000 + trial),
                    ..OracleConfig::default()
                };
                let oracle =
                    gd_minimize_lowrank(&ds.views, &ind.y, s, &model.lambdas, &cfg)?;
                let closed = model.objective;
                let descended = oracle.objective();
                max_floor_violation = max_floor_violation.max(closed - descended);
                max_rel_gap =
                    max_rel_gap.max((closed - descended).abs() / closed.abs().max(1.0));
            }
        }
    }
    checks.push(VerifyCheck::at_most(
        "lowrank_closed_vs_oracle_rel_gap",
        max_rel_gap,
        1e-4,
    ));
    checks.push(VerifyCheck::at_most(
        "lowrank_closed_at_most_oracle",
        max_floor_violation,
        1e-6,
    ));
    checks.push(VerifyCheck::at_most(
        "objective_trace_identity_rel_dev",
        max_trace_dev,
        1e-8,
    ));
    checks.push(VerifyCheck::at_most(
        "objective_monotone_in_rank",
        max_monotonicity_violation,
        1e-8,
    ));

    // Lemma 1: any single-bias perturbation strictly increases the raw
    // objective, and the bias fit never has a larger residual than the
    // bias-free fit.
    let mut min_increase = f64::INFINITY;
    let mut max_residual_gap = f64::MIN;
    for _ in 0..10 {
        let (ds, ind) = random_instance(&mut rng);
        let s = ds.c - 1;
        let model = fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &raw_opts)?;
        let coeffs: Vec<Array2<f64>> = (0..ds.v()).map(|v| model.coefficients(v)).collect();
        let base =
            objective_coefficients(&ds.views, &ind.y, &coeffs, &model.biases, &model.lambdas);
        for v in 0..ds.v() {
            for k in 0..ds.c {
                for delta in [0.01_f64, -0.01] {
                    let mut biases = model.biases.clone();
                    biases[v][k] += delta;
                    let perturbed = objective_coefficients(
                        &ds.views,
                        &ind.y,
                        &coeffs,
                        &biases,
                        &model.lambdas,
                    );
                    min_increase = min_increase.min(perturbed - base);
                }
            }
        }

        let no_bias = FitOptions {
            bias: false,
            ..raw_opts
        };
        let model_n = fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &no_bias)?;
        let r_bias = {
            let views = model.preprocess.transform_views(&ds.views)?;
            let y = model.preprocess.transform_indicator(&ind.y)?;
            crate::solver::residual_r(&model, &views, &y)?
        };
        let r_nobias = {
            let views = model_n.preprocess.transform_views(&ds.views)?;
            let y = model_n.preprocess.transform_indicator(&ind.y)?;
            crate::solver::residual_r(&model_n, &views, &y)?
        };
        max_residual_gap = max_residual_gap.max(r_bias - r_nobias);
    }
    checks.push(VerifyCheck::strictly_above(
        "lemma1_bias_perturbation_min_increase",
        min_increase,
        0.0,
    ));
    checks.push(VerifyCheck::at_most(
        "residual_with_bias_at_most_without",
        max_residual_gap,
        1e-12,
    ));

    // Full-rank closed form: stationarity and oracle agreement.
    let mut max_grad = 0.0_f64;
    let mut max_full_rel = 0.0_f64;
    for trial in 0..10 {
        let (ds, ind) = random_instance(&mut rng);
        let model = fit_full_rank(&ds, &ind, &LambdaStrategy::One, &raw_opts)?;
        max_grad = max_grad.max(fullrank_gradient_max_norm(
            &ds.views,
            &ind.y,
            &model.lambdas,
            &model.bv,
            &model.biases,
        )?);
        if trial < 5 {
            let cfg = OracleConfig {
                seed: seed.wrapping_add(2000 + trial),
                ..OracleConfig::default()
            };
            let oracle = gd_minimize_fullrank(&ds.views, &ind.y, &model.lambdas, &cfg)?;
            let closed = objective_coefficients(
                &ds.views,
                &ind.y,
                &model.bv,
                &model.biases,
                &model.lambdas,
            );
            max_full_rel =
                max_full_rel.max((closed - oracle.objective()).abs() / closed.abs().max(1.0));
        }
    }
    checks.push(VerifyCheck::at_most(
        "fullrank_stationarity_max_grad",
        max_grad,
        1e-8,
    ));
    checks.push(VerifyCheck::at_most(
        "fullrank_closed_vs_oracle_rel_gap",
        max_full_rel,
        1e-6,
    ));

    // Generalized eigensolver against the direct-inverse route.
    let mut max_pair_residual = 0.0_f64;
    let mut max_gram_dev = 0.0_f64;
    let mut max_direct_residual = 0.0_f64;
    let mut min_eigenvalue = f64::INFINITY;
    for _ in 0..12 {
        let p = rng.random_range(3..=7usize);
        let n = rng.random_range(8..=16usize);
        let x = normal_matrix(&mut rng, p, n);
        let y = normal_matrix(&mut rng, p, 2);
        let s_b = y.dot(&y.t());
        let s_t = x.dot(&x.t()) + Array2::<f64>::eye(p);
        let pairs = generalized_eig(&s_b, &s_t, p)?;
        min_eigenvalue = min_eigenvalue.min(pairs.values[p - 1]);

        let gram = pairs.vectors.t().dot(&s_t).dot(&pairs.vectors);
        for i in 0..p {
            for j in 0..p {
                let expect = if i == j { 1.0 } else { 0.0 };
                max_gram_dev = max_gram_dev.max((gram[[i, j]] - expect).abs());
            }
        }
        let sb_norm = frob(&s_b);
        let st_norm = frob(&s_t);
        for i in 0..p {
            let a = pairs.vectors.column(i).to_owned();
            let resid = &s_b.dot(&a) - &s_t.dot(&a).mapv(|v| v * pairs.values[i]);
            let err = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            max_pair_residual = max_pair_residual
                .max(err / (sb_norm + pairs.values[i].abs() * st_norm).max(1.0));
        }
        if let Some(st_inv) = invert_dense(&s_t) {
            let m = st_inv.dot(&s_b);
            let scale = frob(&m).max(1.0);
            for i in 0..p {
                let a = pairs.vectors.column(i).to_owned();
                let resid = &m.dot(&a) - &a.mapv(|v| v * pairs.values[i]);
                let err = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
                max_direct_residual = max_direct_residual.max(err / scale);
            }
        }
    }
    checks.push(VerifyCheck::at_most(
        "eig_scaled_residual",
        max_pair_residual,
        1e-8,
    ));
    checks.push(VerifyCheck::at_most(
        "eig_metric_orthonormality",
        max_gram_dev,
        1e-8,
    ));
    checks.push(VerifyCheck::at_most(
        "eig_direct_inverse_agreement",
        max_direct_residual,
        1e-8,
    ));
    checks.push(VerifyCheck::at_most(
        "eig_generalized_nonnegativity",
        -min_eigenvalue,
        1e-10,
    ));

    // Basis change A -> AR leaves every per-view coefficient product alone.
    let mut max_basis_dev = 0.0_f64;
    for _ in 0..5 {
        let (ds, ind) = random_instance(&mut rng);
        let s = ds.c - 1;
        let model = fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &FitOptions::default())?;
        let views = model.preprocess.transform_views(&ds.views)?;
        let y = model.preprocess.transform_indicator(&ind.y)?;
        let scatter = build_scatter(&views, &y, &model.lambdas)?;
        let xy = stack_xy(&views, &y);
        let total: usize = model.a.iter().map(|a| a.nrows()).sum();
        let mut stacked = Array2::zeros((total, s));
        let mut off = 0;
        for a in &model.a {
            stacked
                .slice_mut(ndarray::s![off..off + a.nrows(), ..])
                .assign(a);
            off += a.nrows();
        }
        let mut r = normal_matrix(&mut rng, s, s);
        for i in 0..s {
            r[[i, i]] += 2.0; // keep it comfortably invertible
        }
        let mixed = stacked.dot(&r);
        let b_mixed = compute_b(&mixed, &scatter, &xy)?;
        let mut row = 0;
        for (v, a) in model.a.iter().enumerate() {
            let original = a.dot(&model.b);
            let remixed = mixed
                .slice(ndarray::s![row..row + a.nrows(), ..])
                .dot(&b_mixed);
            row += a.nrows();
            let dev = (&original - &remixed)
                .iter()
                .map(|x| x.abs())
                .fold(0.0_f64, f64::max);
            max_basis_dev = max_basis_dev.max(dev);
            let _ = v;
        }
    }
    checks.push(VerifyCheck::at_most(
        "basis_change_invariance",
        max_basis_dev,
        1e-8,
    ));

    // Shifting a raw feature row is absorbed by centering: training
    // predictions agree between the original and the shifted fit.
    let mut max_shift_dev = 0.0_f64;
    for _ in 0..5 {
        let (ds, ind) = random_instance(&mut rng);
        let s = ds.c - 1;
        let model = fit_low_rank(&ds, &ind, s, &LambdaStrategy::One, &raw_opts)?;
        let mut shifted_views = ds.views.clone();
        let shift = 7.5;
        for val in shifted_views[0].data.row_mut(0) {
            *val += shift;
        }
        let shifted =
            MultiViewDataset::new(shifted_views, ds.labels.clone(), ds.c)?;
        let model_shifted = fit_low_rank(&shifted, &ind, s, &LambdaStrategy::One, &raw_opts)?;
        for i in 0..ds.n() {
            let a = score_views(&ds.sample(i), &model, true)?;
            let b = score_views(&shifted.sample(i), &model_shifted, true)?;
            let dev = (&a - &b).iter().map(|x| x.abs()).fold(0.0_f64, f64::max);
            max_shift_dev = max_shift_dev.max(dev);
        }
    }
    checks.push(VerifyCheck::at_most(
        "feature_shift_invariance",
        max_shift_dev,
        1e-9,
    ));

    // Sum rule: the fused vector is the row mean, gradient-zero minimizer.
    let mut max_sum_dev = 0.0_f64;
    for _ in 0..10 {
        let v = rng.random_range(1..=4usize);
        let c = rng.random_range(2..=4usize);
        let scores = normal_matrix(&mut rng, v, c);
        let (_, fused) = predict_sum(&scores);
        for k in 0..c {
            let mut mean = 0.0;
            for row in 0..v {
                mean += scores[[row, k]];
            }
            mean /= v as f64;
            max_sum_dev = max_sum_dev.max((fused[k] - mean).abs());
            // Gradient of sum_v ||y - row_v||^2 at the fused point.
            let grad: f64 = 2.0 * (v as f64 * fused[k] - (0..v).map(|r| scores[[r, k]]).sum::<f64>());
            max_sum_dev = max_sum_dev.max(grad.abs());
        }
    }
    checks.push(VerifyCheck::at_most(
        "sum_rule_is_row_mean_minimizer",
        max_sum_dev,
        1e-12,
    ));

    // A constructed two-view disagreement splits the vote mass exactly.
    let tie_scores = ndarray::array![[0.9, 0.1], [0.2, 0.8]];
    let tie = predict_voting(&tie_scores);
    let tie_dev = (tie[0] - 0.5).abs().max((tie[1] - 0.5).abs());
    checks.push(VerifyCheck::at_most("voting_two_way_tie_mass", tie_dev, 0.0));

    let _ = Array1::<f64>::zeros(1);
    Ok(checks)
}
