use rand::seq::index::sample;
use rand::Rng;

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::seed;

use super::{check_dims, Scorer};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length in a binary search tree of `n`
/// nodes.
fn average_path(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        size: usize,
    },
}

impl Node {
    fn build(data: &TimeSeries, idx: &mut [usize], depth: usize, limit: usize, rng: &mut impl Rng) -> Node {
        if depth >= limit || idx.len() <= 1 {
            return Node::Leaf { size: idx.len() };
        }
        let d = data.dims();
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|j| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = data.row(i)[j];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return Node::Leaf { size: idx.len() };
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let threshold = rng.random_range(lo..hi);
        let mut split = 0;
        for k in 0..idx.len() {
            if data.row(idx[k])[feature] < threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        Node::Split {
            feature,
            threshold,
            left: Box::new(Node::build(data, l, depth + 1, limit, rng)),
            right: Box::new(Node::build(data, r, depth + 1, limit, rng)),
        }
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = self;
        let mut depth = 0.0;
        loop {
            match node {
                Node::Leaf { size } => return depth + average_path(*size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Isolation forest; score `2^(-E[h(x)] / c(psi))`.
#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<Node>,
    subsample: usize,
    dims: usize,
}

impl IsolationForest {
    pub fn fit(train: &TimeSeries, trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::insufficient("isolation forest needs at least 2 rows"));
        }
        if trees == 0 || subsample == 0 {
            return Err(Error::invalid("isolation forest needs trees >= 1 and subsample >= 1"));
        }
        let psi = subsample.min(train.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let forest = (0..trees)
            .map(|t| {
                let mut rng = seed::rng(seed::derive_indexed(seed, "iforest.tree", t as u64));
                let mut idx = sample(&mut rng, train.len(), psi).into_vec();
                Node::build(train, &mut idx, 0, limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees: forest,
            subsample: psi,
            dims: train.dims(),
        })
    }
}

impl Scorer for IsolationForest {
    fn dims(&self) -> usize {
        self.dims
    }

    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        check_dims(self.dims, data)?;
        let c = average_path(self.subsample).max(f64::MIN_POSITIVE);
        Ok(data
            .rows()
            .map(|x| {
                let mean = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
                2f64.powf(-mean / c)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_constants() {
        assert_eq!(average_path(1), 0.0);
        assert_eq!(average_path(2), 1.0);
        // c(256) from the reference definition
        assert!((average_path(256) - 10.2448).abs() < 1e-3);
    }

    #[test]
    fn isolates_outlier() {
        let mut vals: Vec<f64> = (0..300).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        vals.push(25.0);
        let train = TimeSeries::univariate("t", vals, None).unwrap();
        let f = IsolationForest::fit(&train, 100, 301, 7).unwrap();
        let s = f.raw_scores(&train).unwrap();
        let last = *s.last().unwrap();
        assert!(last > 0.6, "outlier score {last}");
        assert!(s[..300].iter().all(|&x| x < last));
    }

    #[test]
    fn deterministic_given_seed() {
        let vals: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).sin()).collect();
        let t = TimeSeries::univariate("t", vals, None).unwrap();
        let a = IsolationForest::fit(&t, 20, 64, 1).unwrap().raw_scores(&t).unwrap();
        let b = IsolationForest::fit(&t, 20, 64, 1).unwrap().raw_scores(&t).unwrap();
        assert_eq!(a, b);
    }
}
