use serde::{Deserialize, Serialize};

use super::TrajectoryFeatureVector;
use crate::error::{contract, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-coordinate mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits on feature vectors, which must all share one spec hash.
    pub fn fit(train: &[TrajectoryFeatureVector]) -> Result<Self> {
        let Some(first) = train.first() else {
            return contract("cannot fit normalization on an empty set");
        };
        if train.iter().any(|f| f.spec_hash != first.spec_hash) {
            return contract("feature vectors have mixed spec hashes");
        }
        let rows: Vec<&[f64]> = train.iter().map(|f| f.values.as_slice()).collect();
        Self::fit_rows(&rows)
    }

    pub fn fit_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return contract("cannot fit normalization on an empty set");
        };
        let dim = first.as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return contract("rows have different lengths");
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return contract(format!(
                "feature length {} does not match normalization length {}",
                values.len(),
                self.dim()
            ));
        }
        Ok(values
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn apply(&self, f: &TrajectoryFeatureVector) -> Result<TrajectoryFeatureVector> {
        Ok(TrajectoryFeatureVector {
            values: self.apply_values(&f.values)?,
            ..f.clone()
        })
    }
}
