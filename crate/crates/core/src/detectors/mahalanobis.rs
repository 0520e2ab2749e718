use nalgebra::{DMatrix, DVector};

use crate::data::TimeSeries;
use crate::error::{Error, Result};

use super::{check_dims, Scorer};

/// Mahalanobis distance under the training mean and a diagonally loaded
/// covariance (`+ 1e-6 * trace / d` on the diagonal).
#[derive(Debug, Clone)]
pub struct Mahalanobis {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl Mahalanobis {
    pub fn fit(train: &TimeSeries) -> Result<Self> {
        let n = train.len();
        let d = train.dims();
        if n < 2 {
            return Err(Error::insufficient("Mahalanobis needs at least 2 rows"));
        }
        let x = DMatrix::from_row_slice(n, d, train.values());
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let trace = cov.trace();
        let load = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
        for j in 0..d {
            cov[(j, j)] += load;
        }
        let precision = cov
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance not positive definite after loading"))?
            .inverse();
        Ok(Self { mean, precision })
    }

    /// Builds the detector from an explicit mean and covariance.
    pub fn from_moments(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let cov = DMatrix::from_row_slice(d, d, &covariance);
        let precision = cov
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance not positive definite"))?
            .inverse();
        Ok(Self {
            mean: DVector::from_vec(mean),
            precision,
        })
    }
}

impl Scorer for Mahalanobis {
    fn dims(&self) -> usize {
        self.mean.len()
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.dims(), data)?;
        Ok(data
            .rows()
            .map(|r| {
                let diff = DVector::from_column_slice(r) - &self.mean;
                (diff.transpose() * &self.precision * &diff)[(0, 0)].max(0.0).sqrt()
            })
            .collect())
    }
}
