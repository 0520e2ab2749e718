use crate::data::TimeSeries;
use crate::error::{Error, Result};

use super::{check_dims, Scorer};

/// `|x_t - mean(x_{t-w}..x_{t-1})|` per feature, max over features. Early
/// timesteps use whatever history exists; the first timestep scores 0.
#[derive(Debug, Clone)]
pub struct RollingMean {
    window: usize,
    dims: usize,
}

impl RollingMean {
    pub fn fit(train: &TimeSeries, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("rolling-mean window must be >= 1"));
        }
        if train.len() < 2 {
            return Err(Error::insufficient("rolling mean needs at least 2 rows"));
        }
        Ok(Self {
            window,
            dims: train.dims(),
        })
    }
}

impl Scorer for RollingMean {
    fn dims(&self) -> usize {
        self.dims
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.dims, data)?;
        let n = data.len();
        let mut out = vec![0.0; n];
        for j in 0..self.dims {
            let col = data.column(j);
            let mut sum = 0.0;
            for t in 0..n {
                let have = t.min(self.window);
                if have > 0 {
                    let resid = (col[t] - sum / have as f64).abs();
                    out[t] = f64::max(out[t], resid);
                }
                sum += col[t];
                if t >= self.window {
                    sum -= col[t - self.window];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_residual() {
        let s = TimeSeries::univariate("s", vec![0.0, 0.0, 0.0, 0.0, 10.0], None).unwrap();
        let rm = RollingMean::fit(&s, 3).unwrap();
        assert_eq!(rm.raw_scores(&s).unwrap()[4], 10.0);
    }

    #[test]
    fn matches_naive_mean() {
        let vals: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let s = TimeSeries::univariate("s", vals.clone(), None).unwrap();
        let rm = RollingMean::fit(&s, 5).unwrap();
        let fast = rm.raw_scores(&s).unwrap();
        for t in 1usize..40 {
            let lo = t.saturating_sub(5);
            let m = vals[lo..t].iter().sum::<f64>() / (t - lo) as f64;
            assert!((fast[t] - (vals[t] - m).abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn max_over_features() {
        let s = TimeSeries::new("s", vec![0.0, 0.0, 1.0, -4.0], 2, None).unwrap();
        let rm = RollingMean::fit(&s, 2).unwrap();
        assert_eq!(rm.raw_scores(&s).unwrap(), vec![0.0, 4.0]);
    }
}
