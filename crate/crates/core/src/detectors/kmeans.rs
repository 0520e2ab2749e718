use rand::Rng;

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::seed;

use super::{check_dims, sq_dist, Scorer};

const MAX_ITER: usize = 100;

/// Distance to the nearest k-means centroid (k-means++ seeding, Lloyd
/// iterations).
#[derive(Debug, Clone)]
pub struct KMeansDetector {
    centroids: Vec<Vec<f64>>,
}

impl KMeansDetector {
    pub fn fit(train: &TimeSeries, clusters: usize, seed: u64) -> Result<Self> {
        if clusters == 0 {
            return Err(Error::invalid("k-means needs at least one cluster"));
        }
        if train.len() < clusters {
            return Err(Error::insufficient(format!(
                "k-means with {clusters} clusters needs at least {clusters} rows"
            )));
        }
        let mut rng = seed::rng(seed);
        let rows: Vec<&[f64]> = train.rows().collect();

        let mut centroids: Vec<Vec<f64>> = vec![rows[rng.random_range(0..rows.len())].to_vec()];
        let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
        while centroids.len() < clusters {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random_range(0.0..total);
                let mut pick = rows.len() - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.random_range(0..rows.len())
            };
            centroids.push(rows[next].to_vec());
            for (v, r) in d2.iter_mut().zip(&rows) {
                *v = v.min(sq_dist(r, centroids.last().unwrap()));
            }
        }

        let d = train.dims();
        let mut assign = vec![usize::MAX; rows.len()];
        for _ in 0..MAX_ITER {
            let mut changed = false;
            for (a, r) in assign.iter_mut().zip(&rows) {
                let best = nearest(&centroids, r).0;
                if *a != best {
                    *a = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0; d]; clusters];
            let mut counts = vec![0usize; clusters];
            for (&a, r) in assign.iter().zip(&rows) {
                counts[a] += 1;
                for (s, &x) in sums[a].iter_mut().zip(r.iter()) {
                    *s += x;
                }
            }
            for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
                // empty clusters keep their previous centroid
                if n > 0 {
                    *c = s.into_iter().map(|x| x / n as f64).collect();
                }
            }
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(x, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one centroid")
}

impl Scorer for KMeansDetector {
    fn dims(&self) -> usize {
        self.centroids[0].len()
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.dims(), data)?;
        Ok(data.rows().map(|r| nearest(&self.centroids, r).1.sqrt()).collect())
    }
}
