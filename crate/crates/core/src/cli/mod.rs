//! Experiment harness behind the `mvlrr` binary.
//!
//! Each mode is a deterministic function of its inputs and seed, and writes
//! a flat CSV table plus a nested JSON report under the `--out` prefix. The
//! comparison modes reproduce the study designs: bias ablation, Sum versus
//! Voting, lambda strategies, multi-view versus single view, ridge versus
//! linear, and low-rank versus full-rank.

mod verify;

pub use verify::{run_verify, VerifyCheck};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::data::{
    build_class_indicator, load_manifest, stratified_split, synth_generate, write_dataset,
    ClassIndicator, MultiViewDataset, SynthParams,
};
use crate::predict::{
    accuracy, predict_sum, predict_voting, score_views, score_views_full, Prediction,
};
use crate::solver::{
    fit_full_rank, fit_low_rank, load_model, residual_r, save_model, FitOptions, FullRankModel,
    LambdaStrategy, LowRankModel, ModelFile,
};
use crate::{Error, Result};

/// Multi-view decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sum,
    Voting,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "voting" => Ok(Self::Voting),
            other => Err(Error::Usage(format!(
                "unknown method {other:?} (expected sum|voting)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sum => write!(f, "sum"),
            Self::Voting => write!(f, "voting"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Cv,
    Sweep,
    AblateBias,
    CompareViews,
    CompareLambda,
    CompareLinear,
    CompareFullrank,
    Synth,
    Verify,
    Predict,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Cv => "cv",
            Self::Sweep => "sweep",
            Self::AblateBias => "ablate-bias",
            Self::CompareViews => "compare-views",
            Self::CompareLambda => "compare-lambda",
            Self::CompareLinear => "compare-linear",
            Self::CompareFullrank => "compare-fullrank",
            Self::Synth => "synth",
            Self::Verify => "verify",
            Self::Predict => "predict",
        }
    }
}

/// One fully resolved invocation.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub rank: Option<usize>,
    pub rank_range: Option<(usize, usize)>,
    pub lambda: LambdaStrategy,
    pub bias: bool,
    pub normalize: bool,
    pub method: Method,
    pub folds: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub synth: Option<SynthParams>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            manifest: None,
            model: None,
            rank: None,
            rank_range: None,
            lambda: LambdaStrategy::One,
            bias: true,
            normalize: true,
            method: Method::Sum,
            folds: 5,
            seed: 42,
            out: None,
            synth: None,
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            bias: self.bias,
            normalize: self.normalize,
            strict: false,
        }
    }

    /// Ranks to evaluate, bounded by `1..=c-1`; defaults to the full range.
    fn ranks(&self, c: usize) -> Result<Vec<usize>> {
        if c < 2 {
            return Err(Error::Usage(
                "rank sweeps need at least 2 classes".into(),
            ));
        }
        let (lo, hi) = match (self.rank, self.rank_range) {
            (Some(_), Some(_)) => {
                return Err(Error::Usage(
                    "pass either --rank or --rank-range, not both".into(),
                ))
            }
            (Some(r), None) => (r, r),
            (None, Some((a, b))) => (a, b),
            (None, None) => (1, c - 1),
        };
        if lo == 0 || lo > hi || hi > c - 1 {
            return Err(Error::Usage(format!(
                "rank range {lo}..{hi} outside 1..{}",
                c - 1
            )));
        }
        Ok((lo..=hi).collect())
    }

    fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("{} requires --manifest", self.mode.as_str())))
    }

    fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("{} requires --out", self.mode.as_str())))
    }
}

/// Dispatch one invocation.
pub fn run(config: &ExperimentConfig) -> Result<()> {
    match config.mode {
        Mode::Train => run_train(config),
        Mode::Cv => run_cv(config),
        Mode::Sweep => run_sweep(config),
        Mode::AblateBias => run_ablate_bias(config),
        Mode::CompareViews | Mode::CompareLambda | Mode::CompareLinear | Mode::CompareFullrank => {
            run_compare(config)
        }
        Mode::Synth => run_synth(config),
        Mode::Verify => run_verify(config),
        Mode::Predict => run_predict(config),
    }
}

const CONFIG_HEADER: &str = "mode,dataset,lambda,bias,normalize,method,folds,seed";

#[derive(Debug, Clone, Serialize)]
struct ConfigEcho {
    mode: String,
    dataset: String,
    lambda: String,
    bias: bool,
    normalize: bool,
    method: String,
    folds: usize,
    seed: u64,
}

impl ConfigEcho {
    fn new(config: &ExperimentConfig, dataset: &str) -> Self {
        Self {
            mode: config.mode.as_str().to_string(),
            dataset: dataset.to_string(),
            lambda: config.lambda.to_string(),
            bias: config.bias,
            normalize: config.normalize,
            method: config.method.to_string(),
            folds: config.folds,
            seed: config.seed,
        }
    }

    fn csv_prefix(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.mode,
            self.dataset,
            self.lambda,
            self.bias,
            self.normalize,
            self.method,
            self.folds,
            self.seed
        )
    }
}

fn write_outputs<T: Serialize>(out: &Path, csv_text: &str, report: &T) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let csv_path = append_extension(out, "csv");
    fs::write(&csv_path, csv_text).map_err(|source| Error::Io {
        path: csv_path.clone(),
        source,
    })?;
    let json_path = append_extension(out, "json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|source| Error::Io {
        path: json_path.clone(),
        source,
    })?;
    Ok(())
}

fn append_extension(path: &Path, ext: &str) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".");
    os.push(ext);
    PathBuf::from(os)
}

enum FittedModel {
    Low(LowRankModel),
    Full(FullRankModel),
}

impl FittedModel {
    fn score(&self, x: &[ndarray::Array1<f64>], bias: bool) -> Result<Array2<f64>> {
        match self {
            FittedModel::Low(m) => score_views(x, m, bias),
            FittedModel::Full(m) => score_views_full(x, m, bias),
        }
    }
}

fn fit_at_rank(
    ds: &MultiViewDataset,
    ind: &ClassIndicator,
    rank: usize,
    strategy: &LambdaStrategy,
    opts: &FitOptions,
) -> Result<FittedModel> {
    if rank == ds.c {
        Ok(FittedModel::Full(fit_full_rank(ds, ind, strategy, opts)?))
    } else {
        Ok(FittedModel::Low(fit_low_rank(ds, ind, rank, strategy, opts)?))
    }
}

/// Per-fold Sum and Voting accuracy for one rank.
#[derive(Debug, Clone, Serialize)]
struct FoldAccuracy {
    fold: usize,
    sum: f64,
    voting: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RankResult {
    rank: usize,
    folds: Vec<FoldAccuracy>,
    mean_sum: f64,
    mean_voting: f64,
}

impl RankResult {
    fn mean(&self, method: Method) -> f64 {
        match method {
            Method::Sum => self.mean_sum,
            Method::Voting => self.mean_voting,
        }
    }

    fn fold_value(&self, fold: &FoldAccuracy, method: Method) -> f64 {
        match method {
            Method::Sum => fold.sum,
            Method::Voting => fold.voting,
        }
    }
}

/// Stratified CV over the given ranks; rank `c` routes to the full-rank
/// baseline. Both decision rules are scored from the same fits.
fn cross_validate(
    ds: &MultiViewDataset,
    ranks: &[usize],
    strategy: &LambdaStrategy,
    opts: &FitOptions,
    folds: usize,
    seed: u64,
) -> Result<Vec<RankResult>> {
    let splits = stratified_split(ds, folds, seed)?;
    let mut results = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let mut fold_rows = Vec::with_capacity(splits.len());
        for (fold_id, (train, test)) in splits.iter().enumerate() {
            let sub = ds.subset(train)?;
            let ind = build_class_indicator(&sub.labels, ds.c)?;
            let model = fit_at_rank(&sub, &ind, rank, strategy, opts)?;
            let mut sum_preds = Vec::with_capacity(test.len());
            let mut vote_preds = Vec::with_capacity(test.len());
            let mut truth = Vec::with_capacity(test.len());
            for &i in test {
                let scores = model.score(&ds.sample(i), opts.bias)?;
                sum_preds.push(Prediction::Hard(predict_sum(&scores).0));
                vote_preds.push(Prediction::Soft(predict_voting(&scores)));
                truth.push(ds.labels[i]);
            }
            fold_rows.push(FoldAccuracy {
                fold: fold_id,
                sum: accuracy(&sum_preds, &truth)?,
                voting: accuracy(&vote_preds, &truth)?,
            });
        }
        let k = fold_rows.len() as f64;
        let mean_sum = fold_rows.iter().map(|f| f.sum).sum::<f64>() / k;
        let mean_voting = fold_rows.iter().map(|f| f.voting).sum::<f64>() / k;
        results.push(RankResult {
            rank,
            folds: fold_rows,
            mean_sum,
            mean_voting,
        });
    }
    Ok(results)
}

#[derive(Debug, Serialize)]
struct SeriesReport {
    series: String,
    ranks: Vec<RankResult>,
}

#[derive(Debug, Serialize)]
struct AccuracyReport {
    config: ConfigEcho,
    series: Vec<SeriesReport>,
}

/// Flat rows: one per (series, rank, fold) plus a `mean` row per cell.
fn accuracy_csv(echo: &ConfigEcho, series: &[(String, Method, Vec<RankResult>)]) -> String {
    let mut text = format!("{CONFIG_HEADER},rank,series,fold,accuracy\n");
    let prefix = echo.csv_prefix();
    for (name, method, ranks) in series {
        for rank in ranks {
            for fold in &rank.folds {
                text.push_str(&format!(
                    "{prefix},{},{name},{},{}\n",
                    rank.rank,
                    fold.fold,
                    rank.fold_value(fold, *method)
                ));
            }
            text.push_str(&format!(
                "{prefix},{},{name},mean,{}\n",
                rank.rank,
                rank.mean(*method)
            ));
        }
    }
    text
}

fn load_named_dataset(config: &ExperimentConfig) -> Result<(String, MultiViewDataset)> {
    load_manifest(config.require_manifest()?)
}

fn run_cv(config: &ExperimentConfig) -> Result<()> {
    let (name, ds) = load_named_dataset(config)?;
    let ranks = config.ranks(ds.c)?;
    let results = cross_validate(
        &ds,
        &ranks,
        &config.lambda,
        &config.fit_options(),
        config.folds,
        config.seed,
    )?;
    let echo = ConfigEcho::new(config, &name);
    let series = vec![(config.method.to_string(), config.method, results)];
    let csv = accuracy_csv(&echo, &series);
    let report = AccuracyReport {
        config: echo,
        series: series
            .into_iter()
            .map(|(name, _, ranks)| SeriesReport { series: name, ranks })
            .collect(),
    };
    write_outputs(config.require_out()?, &csv, &report)
}

/// Sum versus Voting over the rank sweep, from the same fits.
fn run_sweep(config: &ExperimentConfig) -> Result<()> {
    let (name, ds) = load_named_dataset(config)?;
    let ranks = config.ranks(ds.c)?;
    let results = cross_validate(
        &ds,
        &ranks,
        &config.lambda,
        &config.fit_options(),
        config.folds,
        config.seed,
    )?;
    let echo = ConfigEcho::new(config, &name);
    let series = vec![
        ("sum".to_string(), Method::Sum, results.clone()),
        ("voting".to_string(), Method::Voting, results),
    ];
    let csv = accuracy_csv(&echo, &series);
    let report = AccuracyReport {
        config: echo,
        series: series
            .into_iter()
            .map(|(name, _, ranks)| SeriesReport { series: name, ranks })
            .collect(),
    };
    write_outputs(config.require_out()?, &csv, &report)
}

#[derive(Debug, Serialize)]
struct AblateRow {
    rank: usize,
    with_bias: f64,
    without_bias: f64,
}

#[derive(Debug, Serialize)]
struct AblateReport {
    config: ConfigEcho,
    rows: Vec<AblateRow>,
}

/// Residual with and without the regression bias, one pair of fits per rank.
fn run_ablate_bias(config: &ExperimentConfig) -> Result<()> {
    let (name, ds) = load_named_dataset(config)?;
    let ind = build_class_indicator(&ds.labels, ds.c)?;
    let ranks = config.ranks(ds.c)?;
    let mut rows = Vec::with_capacity(ranks.len());
    for &rank in &ranks {
        let with = FitOptions {
            bias: true,
            normalize: config.normalize,
            strict: false,
        };
        let without = FitOptions {
            bias: false,
            ..with
        };
        let model_b = fit_low_rank(&ds, &ind, rank, &config.lambda, &with)?;
        let model_n = fit_low_rank(&ds, &ind, rank, &config.lambda, &without)?;
        rows.push(AblateRow {
            rank,
            with_bias: residual_on_own_state(&model_b, &ds, &ind)?,
            without_bias: residual_on_own_state(&model_n, &ds, &ind)?,
        });
    }
    let echo = ConfigEcho::new(config, &name);
    let mut csv = format!("{CONFIG_HEADER},rank,series,residual\n");
    let prefix = echo.csv_prefix();
    for row in &rows {
        csv.push_str(&format!("{prefix},{},with_bias,{}\n", row.rank, row.with_bias));
        csv.push_str(&format!(
            "{prefix},{},no_bias,{}\n",
            row.rank, row.without_bias
        ));
    }
    let report = AblateReport { config: echo, rows };
    write_outputs(config.require_out()?, &csv, &report)
}

/// Residual of a model on the training data transformed by its own
/// preprocessing state.
fn residual_on_own_state(
    model: &LowRankModel,
    ds: &MultiViewDataset,
    ind: &ClassIndicator,
) -> Result<f64> {
    let views = model.preprocess.transform_views(&ds.views)?;
    let y = model.preprocess.transform_indicator(&ind.y)?;
    residual_r(model, &views, &y)
}

/// The four comparison designs share one loop: each produces a set of
/// (series name, configuration) cells evaluated over the rank sweep.
fn run_compare(config: &ExperimentConfig) -> Result<()> {
    let (name, ds) = load_named_dataset(config)?;
    let echo = ConfigEcho::new(config, &name);
    let opts = config.fit_options();
    let mut series: Vec<(String, Method, Vec<RankResult>)> = Vec::new();

    match config.mode {
        Mode::CompareViews => {
            let ranks = config.ranks(ds.c)?;
            let mv = cross_validate(&ds, &ranks, &config.lambda, &opts, config.folds, config.seed)?;
            series.push(("MV".to_string(), config.method, mv));
            for v in 0..ds.v() {
                let single = MultiViewDataset::new(
                    vec![ds.views[v].clone()],
                    ds.labels.clone(),
                    ds.c,
                )?;
                let result = cross_validate(
                    &single,
                    &ranks,
                    &config.lambda,
                    &opts,
                    config.folds,
                    config.seed,
                )?;
                series.push((format!("V{}", v + 1), config.method, result));
            }
        }
        Mode::CompareLambda => {
            let ranks = config.ranks(ds.c)?;
            for strategy in [LambdaStrategy::One, LambdaStrategy::Sum, LambdaStrategy::P90] {
                let result =
                    cross_validate(&ds, &ranks, &strategy, &opts, config.folds, config.seed)?;
                series.push((strategy.to_string(), config.method, result));
            }
        }
        Mode::CompareLinear => {
            let ranks = config.ranks(ds.c)?;
            let ridge =
                cross_validate(&ds, &ranks, &config.lambda, &opts, config.folds, config.seed)?;
            series.push(("ridge".to_string(), config.method, ridge));
            let zeros = LambdaStrategy::Fixed(vec![0.0; ds.v()]);
            let linear = cross_validate(&ds, &ranks, &zeros, &opts, config.folds, config.seed)?;
            series.push(("linear".to_string(), config.method, linear));
        }
        Mode::CompareFullrank => {
            let ranks = config.ranks(ds.c)?;
            let low =
                cross_validate(&ds, &ranks, &config.lambda, &opts, config.folds, config.seed)?;
            series.push(("low_rank".to_string(), config.method, low));
            let full = cross_validate(
                &ds,
                &[ds.c],
                &config.lambda,
                &opts,
                config.folds,
                config.seed,
            )?;
            series.push(("full_rank".to_string(), config.method, full));
        }
        _ => unreachable!("run_compare only handles comparison modes"),
    }

    let csv = accuracy_csv(&echo, &series);
    let report = AccuracyReport {
        config: echo,
        series: series
            .into_iter()
            .map(|(name, _, ranks)| SeriesReport { series: name, ranks })
            .collect(),
    };
    write_outputs(config.require_out()?, &csv, &report)
}

#[derive(Debug, Serialize)]
struct TrainReport {
    config: ConfigEcho,
    rank: usize,
    objective: Option<f64>,
    eigenvalues: Vec<f64>,
    warnings: Vec<String>,
}

/// Fit on the whole dataset and write the model file next to the tables.
fn run_train(config: &ExperimentConfig) -> Result<()> {
    let (name, ds) = load_named_dataset(config)?;
    let rank = config
        .rank
        .ok_or_else(|| Error::Usage("train requires --rank".into()))?;
    if rank == 0 || rank > ds.c {
        return Err(Error::Usage(format!(
            "train rank must lie in 1..={} (rank {} selects the full-rank model)",
            ds.c, ds.c
        )));
    }
    let ind = build_class_indicator(&ds.labels, ds.c)?;
    let fitted = fit_at_rank(&ds, &ind, rank, &config.lambda, &config.fit_options())?;
    let out = config.require_out()?;
    let (model_file, objective, eigenvalues, warnings) = match &fitted {
        FittedModel::Low(m) => (
            ModelFile::from(m),
            Some(m.objective),
            m.eigenvalues.clone(),
            m.warnings.clone(),
        ),
        FittedModel::Full(m) => (ModelFile::from(m), None, Vec::new(), m.warnings.clone()),
    };
    save_model(&model_file, &append_extension(out, "model.json"))?;

    let echo = ConfigEcho::new(config, &name);
    let mut csv = format!("{CONFIG_HEADER},rank,objective\n");
    csv.push_str(&format!(
        "{},{},{}\n",
        echo.csv_prefix(),
        rank,
        objective.map_or_else(|| "-".to_string(), |o| o.to_string())
    ));
    let report = TrainReport {
        config: echo,
        rank,
        objective,
        eigenvalues,
        warnings,
    };
    write_outputs(out, &csv, &report)
}

#[derive(Debug, Serialize)]
struct SynthReport {
    config: ConfigEcho,
    manifest: String,
    n: usize,
    c: usize,
    view_dims: Vec<usize>,
    latent_rank: usize,
    noise_sigma: f64,
}

/// Generate a synthetic dataset and write it as manifest + CSV files into
/// the `--out` directory.
fn run_synth(config: &ExperimentConfig) -> Result<()> {
    let params = config
        .synth
        .clone()
        .ok_or_else(|| Error::Usage("synth requires generator parameters".into()))?;
    let ds = synth_generate(&params)?;
    let dir = config.require_out()?;
    let manifest = write_dataset(&ds, dir, "synthetic")?;
    let echo = ConfigEcho::new(config, "synthetic");
    let mut csv = format!("{CONFIG_HEADER},n,c,views,latent_rank,noise_sigma\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        echo.csv_prefix(),
        params.n,
        params.c,
        params.view_dims.len(),
        params.latent_rank,
        params.noise_sigma
    ));
    let report = SynthReport {
        config: echo,
        manifest: manifest.display().to_string(),
        n: params.n,
        c: params.c,
        view_dims: params.view_dims.clone(),
        latent_rank: params.latent_rank,
        noise_sigma: params.noise_sigma,
    };
    write_outputs(&dir.join("summary"), &csv, &report)
}

#[derive(Debug, Serialize)]
struct PredictRow {
    sample_index: usize,
    predicted_label: usize,
    fused: Vec<f64>,
    votes: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct PredictReport {
    config: ConfigEcho,
    rows: Vec<PredictRow>,
}

/// Score every sample of a manifest under a saved model.
fn run_predict(config: &ExperimentConfig) -> Result<()> {
    let model_path = config
        .model
        .as_deref()
        .ok_or_else(|| Error::Usage("predict requires --model".into()))?;
    let (name, ds) = load_named_dataset(config)?;
    let file = load_model(model_path)?;
    let fitted = match file {
        ModelFile::LowRank { .. } => FittedModel::Low(file.into_low_rank()?),
        ModelFile::FullRank { .. } => FittedModel::Full(file.into_full_rank()?),
    };
    let c = match &fitted {
        FittedModel::Low(m) => m.class_count(),
        FittedModel::Full(m) => m.class_count(),
    };

    let mut rows = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let scores = fitted.score(&ds.sample(i), config.bias)?;
        let (sum_label, fused) = predict_sum(&scores);
        let votes = predict_voting(&scores);
        let predicted_label = match config.method {
            Method::Sum => sum_label,
            Method::Voting => {
                let mut best = 0;
                for k in 1..c {
                    if votes[k] > votes[best] {
                        best = k;
                    }
                }
                best + 1
            }
        };
        rows.push(PredictRow {
            sample_index: i + 1,
            predicted_label,
            fused: fused.to_vec(),
            votes: votes.to_vec(),
        });
    }

    let mut csv = String::from("sample_index,predicted_label");
    for k in 1..=c {
        csv.push_str(&format!(",score_{k}"));
    }
    for k in 1..=c {
        csv.push_str(&format!(",vote_{k}"));
    }
    csv.push('\n');
    for row in &rows {
        csv.push_str(&format!("{},{}", row.sample_index, row.predicted_label));
        for v in &row.fused {
            csv.push_str(&format!(",{v}"));
        }
        for v in &row.votes {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let report = PredictReport {
        config: ConfigEcho::new(config, &name),
        rows,
    };
    write_outputs(config.require_out()?, &csv, &report)
}
