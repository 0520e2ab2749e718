use crate::data::TimeSeries;
use crate::error::{Error, Result};

use super::{check_dims, sq_dist, Scorer};

/// Brute-force neighbor store over training rows.
#[derive(Debug, Clone)]
struct NeighborStore {
    rows: Vec<f64>,
    dims: usize,
}

impl NeighborStore {
    fn new(train: &TimeSeries, k: usize, family: &str) -> Result<Self> {
        if train.len() <= k {
            return Err(Error::insufficient(format!(
                "{family} with k={k} needs more than {k} rows, got {}",
                train.len()
            )));
        }
        Ok(Self {
            rows: train.values().to_vec(),
            dims: train.dims(),
        })
    }

    fn len(&self) -> usize {
        self.rows.len() / self.dims
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dims..(i + 1) * self.dims]
    }

    /// The `k` nearest stored rows to `q` as `(distance, index)`, nearest
    /// first; ties by index. `skip` excludes one stored row.
    fn nearest(&self, q: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| Some(i) != skip)
            .map(|i| (sq_dist(q, self.row(i)), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        all.into_iter().map(|(d, i)| (d.sqrt(), i)).collect()
    }
}

/// Distance to the k-th nearest training row.
#[derive(Debug, Clone)]
pub struct Knn {
    store: NeighborStore,
    k: usize,
}

impl Knn {
    pub fn fit(train: &TimeSeries, k: usize) -> Result<Self> {
        Ok(Self {
            store: NeighborStore::new(train, k, "KNN")?,
            k,
        })
    }

    pub fn stored_rows(&self) -> usize {
        self.store.len()
    }
}

impl Scorer for Knn {
    fn dims(&self) -> usize {
        self.store.dims
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.store.dims, data)?;
        Ok(data
            .rows()
            .map(|q| self.store.nearest(q, self.k, None).last().map_or(0.0, |n| n.0))
            .collect())
    }
}

const LRD_EPS: f64 = 1e-10;

/// Local outlier factor of each query against the training neighborhoods.
#[derive(Debug, Clone)]
pub struct Lof {
    store: NeighborStore,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

impl Lof {
    pub fn fit(train: &TimeSeries, k: usize) -> Result<Self> {
        let store = NeighborStore::new(train, k, "LOF")?;
        let n = store.len();
        let neigh: Vec<Vec<(f64, usize)>> = (0..n).map(|i| store.nearest(store.row(i), k, Some(i))).collect();
        let k_distance: Vec<f64> = neigh.iter().map(|nb| nb.last().map_or(0.0, |x| x.0)).collect();
        let lrd = neigh
            .iter()
            .map(|nb| {
                let reach: f64 = nb.iter().map(|&(d, o)| d.max(k_distance[o])).sum::<f64>() / nb.len() as f64;
                1.0 / (reach + LRD_EPS)
            })
            .collect();
        Ok(Self {
            store,
            k,
            k_distance,
            lrd,
        })
    }
}

impl Scorer for Lof {
    fn dims(&self) -> usize {
        self.store.dims
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.store.dims, data)?;
        Ok(data
            .rows()
            .map(|q| {
                let nb = self.store.nearest(q, self.k, None);
                let reach = nb.iter().map(|&(d, o)| d.max(self.k_distance[o])).sum::<f64>() / nb.len() as f64;
                let lrd_q = 1.0 / (reach + LRD_EPS);
                let mean_lrd = nb.iter().map(|&(_, o)| self.lrd[o]).sum::<f64>() / nb.len() as f64;
                mean_lrd / lrd_q
            })
            .collect())
    }
}
