use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

/// Per-feature z-scoring fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at `epsilon`.
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl Standardizer {
    pub fn fit(train: &Dataset, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "std floor must be positive, got {epsilon}"
            )));
        }
        let mean: Array1<f64> = train
            .values
            .mean_axis(Axis(1))
            .expect("datasets have at least two steps");
        let std = train.values.std_axis(Axis(1), 0.0).mapv(|s| s.max(epsilon));
        Ok(Standardizer {
            mean: mean.to_vec(),
            std: std.to_vec(),
            epsilon,
        })
    }

    fn check(&self, d: &Dataset) -> Result<()> {
        if d.n_features() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} features, dataset has {}",
                self.mean.len(),
                d.n_features()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        self.check(d)?;
        let mut out = d.clone();
        for (i, mut row) in out.values.rows_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[i], self.std[i]);
            row.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, d: &Dataset) -> Result<Dataset> {
        self.check(d)?;
        let mut out = d.clone();
        for (i, mut row) in out.values.rows_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[i], self.std[i]);
            row.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }
}
