//! Dataset manifest loading and writing.
//!
//! A manifest is a JSON file `{"name", "labels", "views": [{"id", "path"}]}`
//! with paths resolved relative to the manifest's directory. View files are
//! CSV with samples as rows; the loader transposes into the
//! features-by-samples orientation. The labels file holds one 1-based
//! integer per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MultiViewDataset, ViewMatrix};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    labels: String,
    views: Vec<ManifestView>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestView {
    id: usize,
    path: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load a dataset from a manifest file; returns the declared name and data.
pub fn load_manifest(path: &Path) -> Result<(String, MultiViewDataset)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.views.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "manifest lists no views".into(),
        });
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let labels_path = base.join(&manifest.labels);
    let labels = load_labels(&labels_path)?;
    let c = *labels.iter().max().expect("labels nonempty");

    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let view_path = base.join(&entry.path);
        let data = load_view_csv(&view_path, labels.len())?;
        views.push(ViewMatrix::new(entry.id, data)?);
    }
    let dataset = MultiViewDataset::new(views, labels, c)?;
    Ok((manifest.name, dataset))
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let label: usize = trimmed.parse().map_err(|_| Error::Manifest {
            path: path.to_path_buf(),
            message: format!("line {}: bad label {trimmed:?}", lineno + 1),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "labels file is empty".into(),
        });
    }
    Ok(labels)
}

fn load_view_csv(path: &Path, expected_n: usize) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let row: Vec<f64> = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Manifest {
                    path: path.to_path_buf(),
                    message: format!("row {}: bad number {field:?}", rows.len() + 1),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    message: format!(
                        "row {} has {} columns, expected {}",
                        rows.len() + 1,
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.len() != expected_n {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!("{} rows but {} labels", rows.len(), expected_n),
        });
    }
    let p = rows[0].len();
    // Samples arrive as rows; store features as rows.
    let mut data = Array2::zeros((p, rows.len()));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            data[[j, i]] = v;
        }
    }
    Ok(data)
}

/// Write a dataset as manifest + labels + per-view CSV under `dir`;
/// returns the manifest path.
pub fn write_dataset(dataset: &MultiViewDataset, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let labels_name = "labels.txt".to_string();
    let labels_path = dir.join(&labels_name);
    let mut labels_text = String::new();
    for &label in &dataset.labels {
        labels_text.push_str(&label.to_string());
        labels_text.push('\n');
    }
    fs::write(&labels_path, labels_text).map_err(io_err(&labels_path))?;

    let mut entries = Vec::with_capacity(dataset.v());
    for view in &dataset.views {
        let file_name = format!("view_{}.csv", view.view_id);
        let view_path = dir.join(&file_name);
        let mut out = fs::File::create(&view_path).map_err(io_err(&view_path))?;
        for i in 0..view.n() {
            let row: Vec<String> = (0..view.p())
                .map(|r| view.data[[r, i]].to_string())
                .collect();
            writeln!(out, "{}", row.join(",")).map_err(io_err(&view_path))?;
        }
        entries.push(ManifestView {
            id: view.view_id,
            path: file_name,
        });
    }

    let manifest = ManifestFile {
        name: name.to_string(),
        labels: labels_name,
        views: entries,
    };
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}
