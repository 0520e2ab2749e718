use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::TimeSeries;
use crate::error::{Error, Result};

use super::{check_dims, Scorer};

/// Squared reconstruction error after projecting onto the top principal
/// axes of the training covariance.
#[derive(Debug, Clone)]
pub struct PcaDetector {
    mean: DVector<f64>,
    // d x c, columns are unit principal axes
    axes: DMatrix<f64>,
}

impl PcaDetector {
    pub fn fit(train: &TimeSeries, components: usize) -> Result<Self> {
        let (n, d) = (train.len(), train.dims());
        if components == 0 || components > d {
            return Err(Error::invalid(format!("PCA components must lie in [1, {d}]")));
        }
        if n < 2 {
            return Err(Error::insufficient("PCA needs at least 2 rows"));
        }
        let x = DMatrix::from_row_slice(n, d, train.values());
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let axes = DMatrix::from_fn(d, components, |i, c| eig.eigenvectors[(i, order[c])]);
        Ok(Self { mean, axes })
    }

    pub fn components(&self) -> usize {
        self.axes.ncols()
    }
}

impl Scorer for PcaDetector {
    fn dims(&self) -> usize {
        self.mean.len()
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.dims(), data)?;
        Ok(data
            .rows()
            .map(|r| {
                let c = DVector::from_column_slice(r) - &self.mean;
                let proj = &self.axes * (self.axes.transpose() * &c);
                (c - proj).norm_squared()
            })
            .collect())
    }
}
