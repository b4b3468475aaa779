//! Time-series ingestion, standardization, partitioning and batching.

mod partition;
mod standardize;
mod synthetic;
mod windows;

use std::fs::File;
use std::path::Path;

use ndarray::{s, Array2};

use crate::{Error, Result};

pub use partition::{dirichlet_partition, PartitionEntry};
pub use standardize::Standardizer;
pub use synthetic::{gen_synthetic, inject_anomalies, LinearSystem, MEAN_SEGMENT_LEN};
pub use windows::{
    make_pair_batches, make_trajectories, pair_index_batches, split_shard, train_split_len,
    PairBatch, ShardSplit, Trajectory,
};

pub const LABEL_COLUMN: &str = "label";

/// A multivariate series stored feature-major: `values[[feature, step]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub values: Array2<f64>,
    pub labels: Option<Vec<u8>>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        values: Array2<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if values.ncols() < 2 {
            return Err(Error::Shape(format!(
                "a dataset needs at least 2 steps, got {}",
                values.ncols()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Shape("a dataset needs at least one feature".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "dataset contains NaN or Inf".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != values.ncols() {
                return Err(Error::Shape(format!(
                    "{} labels for {} steps",
                    l.len(),
                    values.ncols()
                )));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            values,
            labels,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Steps `[start, end)` as a new dataset (labels and names carried over).
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.len() {
            return Err(Error::Shape(format!(
                "step range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let values = self.values.slice(s![.., start..end]).to_owned();
        let labels = self.labels.as_ref().map(|l| l[start..end].to_vec());
        let mut out = Dataset::new(self.name.clone(), values, labels)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    fn header(&self) -> Vec<String> {
        let mut header = self
            .feature_names
            .clone()
            .unwrap_or_else(|| (0..self.n_features()).map(|i| format!("x{i}")).collect());
        if self.labels.is_some() {
            header.push(LABEL_COLUMN.to_string());
        }
        header
    }
}

/// Reads a CSV with a header row, one row per time step and one column per
/// feature. When `has_labels` is set the final column must be `label` with
/// values 0 or 1; otherwise a trailing `label` column is ignored.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_present = header.last().map(|h| h == LABEL_COLUMN).unwrap_or(false);
    if has_labels && !label_present {
        return Err(Error::format(path, "expected a final `label` column"));
    }
    let n_features = if label_present {
        header.len() - 1
    } else {
        header.len()
    };
    if n_features == 0 {
        return Err(Error::format(path, "no feature columns"));
    }

    let mut columns: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => Error::Parse {
                path: path.to_path_buf(),
                row,
                column: 0,
                message: "ragged row".into(),
            },
            _ => Error::format(path, e.to_string()),
        })?;
        for (j, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let value = parsed.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: j + 1,
                message: format!("`{cell}` is not a finite number"),
            })?;
            if j < n_features {
                columns.push(value);
            } else if has_labels {
                if value != 0.0 && value != 1.0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        column: j + 1,
                        message: format!("label `{cell}` is not 0 or 1"),
                    });
                }
                labels.push(value as u8);
            }
        }
    }
    let steps = columns.len() / n_features;
    let values = Array2::from_shape_vec((steps, n_features), columns)
        .map_err(|e| Error::format(path, e.to_string()))?
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let labels = has_labels.then_some(labels);
    Dataset::new(name, values, labels)
        .map_err(|e| Error::format(path, e.to_string()))?
        .with_feature_names(header[..n_features].to_vec())
}

/// Writes `dataset` in the layout accepted by [`load_csv`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let io_err = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(dataset.header()).map_err(io_err)?;
    let mut row = Vec::with_capacity(dataset.n_features() + 1);
    for t in 0..dataset.len() {
        row.clear();
        row.extend(dataset.values.column(t).iter().map(|v| v.to_string()));
        if let Some(labels) = &dataset.labels {
            row.push(labels[t].to_string());
        }
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
