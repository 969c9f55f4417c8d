//! Model (de)serialization.
//!
//! A model file is a single JSON document holding the rank, lambdas,
//! per-view coefficient blocks as row-major arrays with shape, biases,
//! preprocessing means/norms, eigenvalues and the fitted objective. Floats
//! round-trip value-exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{FullRankModel, LowRankModel};
use crate::data::PreprocessState;
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries, `rows * cols` of them.
    pub data: Vec<f64>,
}

impl MatrixData {
    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone()).map_err(|_| {
            Error::DimensionMismatch(format!(
                "matrix payload of {} entries does not fill {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            ))
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LowRankViewData {
    a: MatrixData,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FullRankViewData {
    b: MatrixData,
    bias: Vec<f64>,
}

/// Serialized form of either model kind.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    LowRank {
        rank: usize,
        lambdas: Vec<f64>,
        views: Vec<LowRankViewData>,
        b: MatrixData,
        preprocess: PreprocessState,
        eigenvalues: Vec<f64>,
        objective: f64,
    },
    FullRank {
        lambdas: Vec<f64>,
        views: Vec<FullRankViewData>,
        preprocess: PreprocessState,
    },
}

impl From<&LowRankModel> for ModelFile {
    fn from(model: &LowRankModel) -> Self {
        ModelFile::LowRank {
            rank: model.rank,
            lambdas: model.lambdas.clone(),
            views: model
                .a
                .iter()
                .zip(&model.biases)
                .map(|(a, bias)| LowRankViewData {
                    a: MatrixData::from_array(a),
                    bias: bias.to_vec(),
                })
                .collect(),
            b: MatrixData::from_array(&model.b),
            preprocess: model.preprocess.clone(),
            eigenvalues: model.eigenvalues.clone(),
            objective: model.objective,
        }
    }
}

impl From<&FullRankModel> for ModelFile {
    fn from(model: &FullRankModel) -> Self {
        ModelFile::FullRank {
            lambdas: model.lambdas.clone(),
            views: model
                .bv
                .iter()
                .zip(&model.biases)
                .map(|(b, bias)| FullRankViewData {
                    b: MatrixData::from_array(b),
                    bias: bias.to_vec(),
                })
                .collect(),
            preprocess: model.preprocess.clone(),
        }
    }
}

impl ModelFile {
    pub fn into_low_rank(self) -> Result<LowRankModel> {
        match self {
            ModelFile::LowRank {
                rank,
                lambdas,
                views,
                b,
                preprocess,
                eigenvalues,
                objective,
            } => {
                let mut a = Vec::with_capacity(views.len());
                let mut biases = Vec::with_capacity(views.len());
                for view in views {
                    a.push(view.a.to_array()?);
                    biases.push(Array1::from(view.bias));
                }
                Ok(LowRankModel {
                    a,
                    b: b.to_array()?,
                    biases,
                    rank,
                    lambdas,
                    preprocess,
                    eigenvalues,
                    objective,
                    warnings: Vec::new(),
                })
            }
            ModelFile::FullRank { .. } => Err(Error::InvalidParameter(
                "model file holds a full-rank model".into(),
            )),
        }
    }

    pub fn into_full_rank(self) -> Result<FullRankModel> {
        match self {
            ModelFile::FullRank {
                lambdas,
                views,
                preprocess,
            } => {
                let mut bv = Vec::with_capacity(views.len());
                let mut biases = Vec::with_capacity(views.len());
                for view in views {
                    bv.push(view.b.to_array()?);
                    biases.push(Array1::from(view.bias));
                }
                Ok(FullRankModel {
                    bv,
                    biases,
                    lambdas,
                    preprocess,
                    warnings: Vec::new(),
                })
            }
            ModelFile::LowRank { .. } => Err(Error::InvalidParameter(
                "model file holds a low-rank model".into(),
            )),
        }
    }
}

/// Write a model file as pretty JSON.
pub fn save_model(model: &ModelFile, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(model)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a model file.
pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_class_indicator, MultiViewDataset, ViewMatrix};
    use crate::solver::{fit_full_rank, fit_low_rank, FitOptions, LambdaStrategy};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn fitted_models() -> (LowRankModel, FullRankModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let views = vec![
            ViewMatrix::new(
                1,
                Array2::from_shape_fn((3, 10), |_| rng.sample::<f64, _>(StandardNormal)),
            )
            .unwrap(),
            ViewMatrix::new(
                2,
                Array2::from_shape_fn((4, 10), |_| rng.sample::<f64, _>(StandardNormal)),
            )
            .unwrap(),
        ];
        let labels: Vec<usize> = (0..10).map(|i| (i % 2) + 1).collect();
        let ds = MultiViewDataset::new(views, labels, 2).unwrap();
        let ind = build_class_indicator(&ds.labels, 2).unwrap();
        let low =
            fit_low_rank(&ds, &ind, 1, &LambdaStrategy::One, &FitOptions::default()).unwrap();
        let full =
            fit_full_rank(&ds, &ind, &LambdaStrategy::One, &FitOptions::default()).unwrap();
        (low, full)
    }

    #[test]
    fn low_rank_round_trip_is_value_exact() {
        let (model, _) = fitted_models();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&ModelFile::from(&model), &path).unwrap();
        let loaded = load_model(&path).unwrap().into_low_rank().unwrap();

        assert_eq!(loaded.rank, model.rank);
        assert_eq!(loaded.lambdas, model.lambdas);
        assert_eq!(loaded.eigenvalues, model.eigenvalues);
        assert!(loaded.objective == model.objective, "objective drifted");
        for (a, b) in loaded.a.iter().zip(&model.a) {
            assert_eq!(a, b);
        }
        assert_eq!(loaded.b, model.b);
        for (a, b) in loaded.biases.iter().zip(&model.biases) {
            assert_eq!(a, b);
        }
        assert_eq!(loaded.preprocess.view_means, model.preprocess.view_means);
        assert_eq!(loaded.preprocess.row_norms, model.preprocess.row_norms);
    }

    #[test]
    fn full_rank_round_trip_is_value_exact() {
        let (_, model) = fitted_models();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&ModelFile::from(&model), &path).unwrap();
        let loaded = load_model(&path).unwrap().into_full_rank().unwrap();
        for (a, b) in loaded.bv.iter().zip(&model.bv) {
            assert_eq!(a, b);
        }
        for (a, b) in loaded.biases.iter().zip(&model.biases) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let (low, full) = fitted_models();
        assert!(ModelFile::from(&low).into_full_rank().is_err());
        assert!(ModelFile::from(&full).into_low_rank().is_err());
    }
}
