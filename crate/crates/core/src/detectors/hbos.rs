use crate::data::TimeSeries;
use crate::error::{Error, Result};

use super::{check_dims, Scorer};

#[derive(Debug, Clone)]
struct Histogram {
    min: f64,
    width: f64,
    // bin heights divided by the tallest bin
    heights: Vec<f64>,
    floor: f64,
}

impl Histogram {
    fn fit(col: &[f64], bins: usize) -> Self {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &x in col {
            counts[Self::bin_of(x, min, width, bins).unwrap_or(0)] += 1;
        }
        let tallest = *counts.iter().max().unwrap_or(&1) as f64;
        Self {
            min,
            width,
            heights: counts.iter().map(|&c| c as f64 / tallest).collect(),
            // half a sample for empty or out-of-range bins
            floor: 0.5 / tallest,
        }
    }

    fn bin_of(x: f64, min: f64, width: f64, bins: usize) -> Option<usize> {
        if width <= 0.0 {
            return (x == min).then_some(0);
        }
        let pos = (x - min) / width;
        if pos < 0.0 || pos > bins as f64 {
            return None;
        }
        Some((pos as usize).min(bins - 1))
    }

    fn height(&self, x: f64) -> f64 {
        Self::bin_of(x, self.min, self.width, self.heights.len())
            .map(|b| self.heights[b])
            .filter(|&h| h > 0.0)
            .unwrap_or(self.floor)
    }
}

/// Histogram-based outlier score: sum over features of `-ln(bin height)`.
#[derive(Debug, Clone)]
pub struct Hbos {
    histograms: Vec<Histogram>,
}

impl Hbos {
    pub fn fit(train: &TimeSeries, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid("HBOS needs at least 2 bins"));
        }
        Ok(Self {
            histograms: (0..train.dims()).map(|j| Histogram::fit(&train.column(j), bins)).collect(),
        })
    }
}

impl Scorer for Hbos {
    fn dims(&self) -> usize {
        self.histograms.len()
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.dims(), data)?;
        Ok(data
            .rows()
            .map(|r| r.iter().zip(&self.histograms).map(|(&x, h)| -h.height(x).ln()).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_bins_score_lower() {
        let mut vals = vec![0.1; 30];
        vals.extend([0.9; 3]);
        let train = TimeSeries::univariate("t", vals, None).unwrap();
        let h = Hbos::fit(&train, 5).unwrap();
        let q = TimeSeries::univariate("q", vec![0.1, 0.9, 0.5, 7.0], None).unwrap();
        let s = h.raw_scores(&q).unwrap();
        assert_eq!(s[0], 0.0);
        assert!(s[1] > s[0]);
        assert!(s[2] > s[1]);
        assert_eq!(s[2], s[3]);
    }

    #[test]
    fn constant_feature() {
        let train = TimeSeries::univariate("t", vec![2.0; 10], None).unwrap();
        let h = Hbos::fit(&train, 10).unwrap();
        let q = TimeSeries::univariate("q", vec![2.0, 3.0], None).unwrap();
        let s = h.raw_scores(&q).unwrap();
        assert_eq!(s[0], 0.0);
        assert!(s[1] > 0.0);
    }
}
