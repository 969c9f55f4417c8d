//! Dataset representation, ingestion, preprocessing and splits.
//!
//! A dataset is a set of per-view feature matrices in the features-by-samples
//! orientation plus 1-based integer labels. Preprocessing is row
//! normalization of raw features followed by centering; both steps are
//! switchable and their fitted state is kept for test-time application.

mod loader;
mod split;
mod synth;

pub use loader::{load_manifest, write_dataset};
pub use split::stratified_split;
pub use synth::{synth_generate, SynthParams};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One feature representation of the samples, shaped `p x n`
/// (features as rows, samples as columns).
#[derive(Debug, Clone)]
pub struct ViewMatrix {
    pub view_id: usize,
    pub data: Array2<f64>,
}

impl ViewMatrix {
    pub fn new(view_id: usize, data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "view {view_id} has zero feature rows"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("view {view_id}")));
        }
        Ok(Self { view_id, data })
    }

    /// Feature dimension p.
    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    /// Sample count n.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }
}

/// Aligned views over the same samples plus 1-based labels in `1..=c`.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    pub views: Vec<ViewMatrix>,
    pub labels: Vec<usize>,
    pub c: usize,
}

impl MultiViewDataset {
    pub fn new(views: Vec<ViewMatrix>, labels: Vec<usize>, c: usize) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::EmptyInput("dataset has no views".into()));
        }
        let n = labels.len();
        for view in &views {
            if view.n() != n {
                return Err(Error::ViewDimensionMismatch {
                    view_id: view.view_id,
                    expected: n,
                    got: view.n(),
                });
            }
        }
        class_sizes(&labels, c)?;
        Ok(Self { views, labels, c })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn v(&self) -> usize {
        self.views.len()
    }

    /// Per-class sample counts, index j-1 for class j.
    pub fn class_sizes(&self) -> Vec<usize> {
        class_sizes(&self.labels, self.c).expect("validated at construction")
    }

    /// New dataset holding the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<MultiViewDataset> {
        for &i in indices {
            if i >= self.n() {
                return Err(Error::InvalidParameter(format!(
                    "sample index {i} out of range for n={}",
                    self.n()
                )));
            }
        }
        let views = self
            .views
            .iter()
            .map(|view| {
                let mut data = Array2::zeros((view.p(), indices.len()));
                for (col, &i) in indices.iter().enumerate() {
                    data.column_mut(col).assign(&view.data.column(i));
                }
                ViewMatrix {
                    view_id: view.view_id,
                    data,
                }
            })
            .collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        MultiViewDataset::new(views, labels, self.c)
    }

    /// Per-view feature vectors of one sample.
    pub fn sample(&self, i: usize) -> Vec<Array1<f64>> {
        self.views
            .iter()
            .map(|view| view.data.column(i).to_owned())
            .collect()
    }
}

fn class_sizes(labels: &[usize], c: usize) -> Result<Vec<usize>> {
    if c == 0 {
        return Err(Error::InvalidParameter("class count must be >= 1".into()));
    }
    let mut sizes = vec![0usize; c];
    for &label in labels {
        if label == 0 || label > c {
            return Err(Error::LabelOutOfRange { label, c });
        }
        sizes[label - 1] += 1;
    }
    for (j, &size) in sizes.iter().enumerate() {
        if size == 0 {
            return Err(Error::EmptyClass { class: j + 1 });
        }
    }
    Ok(sizes)
}

/// Normalized class indicator: `Y[i][j] = 1/sqrt(n_j)` iff sample i is in
/// class j, giving unit-norm, mutually orthogonal columns.
#[derive(Debug, Clone)]
pub struct ClassIndicator {
    pub y: Array2<f64>,
    pub class_sizes: Vec<usize>,
}

pub fn build_class_indicator(labels: &[usize], c: usize) -> Result<ClassIndicator> {
    let sizes = class_sizes(labels, c)?;
    let mut y = Array2::zeros((labels.len(), c));
    for (i, &label) in labels.iter().enumerate() {
        y[[i, label - 1]] = 1.0 / (sizes[label - 1] as f64).sqrt();
    }
    Ok(ClassIndicator {
        y,
        class_sizes: sizes,
    })
}

/// Row norms measured by [`normalize_rows`]; zero rows are left untouched
/// and reported here rather than treated as errors.
#[derive(Debug, Clone)]
pub struct RowNormReport {
    pub norms: Array1<f64>,
    pub zero_rows: Vec<usize>,
}

/// Scale every nonzero feature row to unit Euclidean norm.
pub fn normalize_rows(view: &ViewMatrix) -> (ViewMatrix, RowNormReport) {
    let mut data = view.data.clone();
    let mut norms = Array1::zeros(view.p());
    let mut zero_rows = Vec::new();
    for (i, mut row) in data.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[i] = norm;
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            zero_rows.push(i);
        }
    }
    (
        ViewMatrix {
            view_id: view.view_id,
            data,
        },
        RowNormReport { norms, zero_rows },
    )
}

/// Fitted preprocessing state: per-view feature means, indicator column
/// means and original row norms, with flags recording which steps ran.
/// Means are zeros and norms ones for steps that were disabled, so applying
/// the state is unconditional arithmetic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessState {
    pub view_means: Vec<Vec<f64>>,
    pub indicator_means: Vec<f64>,
    pub row_norms: Vec<Vec<f64>>,
    pub normalized: bool,
    pub centered: bool,
}

impl PreprocessState {
    pub fn view_count(&self) -> usize {
        self.view_means.len()
    }

    /// Apply stored norms and means to whole view matrices (the training-data
    /// counterpart of [`apply_preprocess`]).
    pub fn transform_views(&self, views: &[ViewMatrix]) -> Result<Vec<ViewMatrix>> {
        if views.len() != self.view_count() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} views, input has {}",
                self.view_count(),
                views.len()
            )));
        }
        let mut out = Vec::with_capacity(views.len());
        for (v, view) in views.iter().enumerate() {
            if view.p() != self.view_means[v].len() {
                return Err(Error::ViewDimensionMismatch {
                    view_id: view.view_id,
                    expected: self.view_means[v].len(),
                    got: view.p(),
                });
            }
            let mut data = view.data.clone();
            for (i, mut row) in data.rows_mut().into_iter().enumerate() {
                let norm = self.row_norms[v][i];
                if self.normalized && norm > 0.0 {
                    row.mapv_inplace(|x| x / norm);
                }
                let mean = self.view_means[v][i];
                row.mapv_inplace(|x| x - mean);
            }
            out.push(ViewMatrix {
                view_id: view.view_id,
                data,
            });
        }
        Ok(out)
    }

    /// Subtract stored indicator column means.
    pub fn transform_indicator(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        if y.ncols() != self.indicator_means.len() {
            return Err(Error::DimensionMismatch(format!(
                "indicator has {} columns, state has {}",
                y.ncols(),
                self.indicator_means.len()
            )));
        }
        let mut out = y.clone();
        for (k, mean) in self.indicator_means.iter().enumerate() {
            out.column_mut(k).mapv_inplace(|v| v - mean);
        }
        Ok(out)
    }
}

/// Center views and indicator by their training means.
///
/// Returns the centered data plus a state holding the subtracted means
/// (normalization fields are identity; compose with [`normalize_rows`]
/// through [`fit_preprocess`] for the full pipeline).
pub fn center(
    views: &[ViewMatrix],
    y: &Array2<f64>,
) -> Result<(Vec<ViewMatrix>, Array2<f64>, PreprocessState)> {
    let n = y.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("cannot center zero samples".into()));
    }
    let mut centered_views = Vec::with_capacity(views.len());
    let mut view_means = Vec::with_capacity(views.len());
    for view in views {
        if view.n() != n {
            return Err(Error::ViewDimensionMismatch {
                view_id: view.view_id,
                expected: n,
                got: view.n(),
            });
        }
        let means = view.data.mean_axis(Axis(1)).expect("n > 0");
        let mut data = view.data.clone();
        for (i, mut row) in data.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v - means[i]);
        }
        view_means.push(means.to_vec());
        centered_views.push(ViewMatrix {
            view_id: view.view_id,
            data,
        });
    }
    let y_means = y.mean_axis(Axis(0)).expect("n > 0");
    let mut y_c = y.clone();
    for (k, mean) in y_means.iter().enumerate() {
        y_c.column_mut(k).mapv_inplace(|v| v - mean);
    }
    let state = PreprocessState {
        row_norms: views.iter().map(|v| vec![1.0; v.p()]).collect(),
        view_means,
        indicator_means: y_means.to_vec(),
        normalized: false,
        centered: true,
    };
    Ok((centered_views, y_c, state))
}

/// Which preprocessing steps to run when fitting.
#[derive(Debug, Clone, Copy)]
pub struct PreprocessOptions {
    pub normalize: bool,
    pub center: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            center: true,
        }
    }
}

/// Preprocessed training data with the fitted state and any warnings
/// (currently only zero feature rows).
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub views: Vec<ViewMatrix>,
    pub y: Array2<f64>,
    pub state: PreprocessState,
    pub warnings: Vec<String>,
}

/// Row-normalize then center, per the configured flags.
pub fn fit_preprocess(
    dataset: &MultiViewDataset,
    indicator: &ClassIndicator,
    opts: PreprocessOptions,
) -> Result<Preprocessed> {
    let mut warnings = Vec::new();
    let mut views: Vec<ViewMatrix> = Vec::with_capacity(dataset.v());
    let mut row_norms: Vec<Vec<f64>> = Vec::with_capacity(dataset.v());
    for view in &dataset.views {
        if opts.normalize {
            let (normalized, report) = normalize_rows(view);
            if !report.zero_rows.is_empty() {
                warnings.push(format!(
                    "view {}: {} zero feature rows left unscaled",
                    view.view_id,
                    report.zero_rows.len()
                ));
            }
            row_norms.push(report.norms.to_vec());
            views.push(normalized);
        } else {
            row_norms.push(vec![1.0; view.p()]);
            views.push(view.clone());
        }
    }

    let (views, y, mut state) = if opts.center {
        center(&views, &indicator.y)?
    } else {
        let state = PreprocessState {
            view_means: views.iter().map(|v| vec![0.0; v.p()]).collect(),
            indicator_means: vec![0.0; indicator.y.ncols()],
            row_norms: Vec::new(),
            normalized: false,
            centered: false,
        };
        (views, indicator.y.clone(), state)
    };
    state.row_norms = row_norms;
    state.normalized = opts.normalize;
    Ok(Preprocessed {
        views,
        y,
        state,
        warnings,
    })
}

/// Scale and shift per-view test vectors with a fitted state, in the same
/// order as training preprocessing (norms first, then means).
pub fn apply_preprocess(
    x_views: &[Array1<f64>],
    state: &PreprocessState,
) -> Result<Vec<Array1<f64>>> {
    if x_views.len() != state.view_count() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} views, input has {}",
            state.view_count(),
            x_views.len()
        )));
    }
    let mut out = Vec::with_capacity(x_views.len());
    for (v, x) in x_views.iter().enumerate() {
        if x.len() != state.view_means[v].len() {
            return Err(Error::ViewDimensionMismatch {
                view_id: v + 1,
                expected: state.view_means[v].len(),
                got: x.len(),
            });
        }
        let mut vec = x.clone();
        for i in 0..vec.len() {
            let norm = state.row_norms[v][i];
            if state.normalized && norm > 0.0 {
                vec[i] /= norm;
            }
            vec[i] -= state.view_means[v][i];
        }
        out.push(vec);
    }
    Ok(out)
}
