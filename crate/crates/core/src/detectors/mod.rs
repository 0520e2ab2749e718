//! Base detectors and the normalized score matrix every selector consumes.
//!
//! A detector is fitted on clean data only; its calibration is the
//! `(min, max)` range of raw scores over that fit data, and every later score
//! is mapped through [`normalize`] into `[0, 1]`.

mod hbos;
mod iforest;
mod kmeans;
mod mahalanobis;
mod neighbors;
mod pca;
mod rolling;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeries, Window};
use crate::error::{Error, Result};
use crate::seed;

pub use hbos::Hbos;
pub use iforest::IsolationForest;
pub use kmeans::KMeansDetector;
pub use mahalanobis::Mahalanobis;
pub use neighbors::{Knn, Lof};
pub use pca::PcaDetector;
pub use rolling::RollingMean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Knn,
    Lof,
    Md,
    Rm,
    Hbos,
    Pca,
    Iforest,
    Kmeans,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Knn,
        Family::Lof,
        Family::Md,
        Family::Rm,
        Family::Hbos,
        Family::Pca,
        Family::Iforest,
        Family::Kmeans,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Knn => "knn",
            Family::Lof => "lof",
            Family::Md => "md",
            Family::Rm => "rm",
            Family::Hbos => "hbos",
            Family::Pca => "pca",
            Family::Iforest => "iforest",
            Family::Kmeans => "kmeans",
        }
    }

    /// Parameter names accepted as fixed overrides.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Family::Knn | Family::Lof => &["k"],
            Family::Md => &[],
            Family::Rm => &["window"],
            Family::Hbos => &["bins"],
            Family::Pca => &["components"],
            Family::Iforest => &["trees", "subsample"],
            Family::Kmeans => &["clusters"],
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown detector family `{s}`")))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DetectorSpec {
    Knn { k: usize },
    Lof { k: usize },
    Md,
    Rm { window: usize },
    Hbos { bins: usize },
    Pca { components: usize },
    Iforest { trees: usize, subsample: usize, seed: u64 },
    Kmeans { clusters: usize, seed: u64 },
}

impl DetectorSpec {
    pub fn family(&self) -> Family {
        match self {
            DetectorSpec::Knn { .. } => Family::Knn,
            DetectorSpec::Lof { .. } => Family::Lof,
            DetectorSpec::Md => Family::Md,
            DetectorSpec::Rm { .. } => Family::Rm,
            DetectorSpec::Hbos { .. } => Family::Hbos,
            DetectorSpec::Pca { .. } => Family::Pca,
            DetectorSpec::Iforest { .. } => Family::Iforest,
            DetectorSpec::Kmeans { .. } => Family::Kmeans,
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        match *self {
            DetectorSpec::Knn { k } | DetectorSpec::Lof { k } => positive("k", k),
            DetectorSpec::Md => Ok(()),
            DetectorSpec::Rm { window } => positive("window", window),
            DetectorSpec::Hbos { bins } if bins < 2 => Err(Error::invalid("HBOS needs at least 2 bins")),
            DetectorSpec::Hbos { .. } => Ok(()),
            DetectorSpec::Pca { components } => {
                positive("components", components)?;
                if components > dims {
                    return Err(Error::invalid(format!(
                        "PCA components {components} exceed feature count {dims}"
                    )));
                }
                Ok(())
            }
            DetectorSpec::Iforest { trees, subsample, .. } => {
                positive("trees", trees)?;
                positive("subsample", subsample)
            }
            DetectorSpec::Kmeans { clusters, .. } => positive("clusters", clusters),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub id: String,
    #[serde(flatten)]
    pub spec: DetectorSpec,
}

/// How many instances of a family to draw, with optional fixed parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FamilyRequest {
    pub count: usize,
    pub fixed: BTreeMap<String, usize>,
}

pub type PoolRequest = BTreeMap<Family, FamilyRequest>;

/// Draws hyperparameters uniformly from each family's range:
/// k in [3, 50], window in [5, 100], bins in [5, 50], components in [1, d],
/// trees in [50, 150], subsample in [64, 256], clusters in [2, 10].
pub fn build_pool(request: &PoolRequest, dims: usize, seed: u64) -> Result<Vec<DetectorConfig>> {
    let total: usize = request.values().map(|r| r.count).sum();
    if total == 0 {
        return Err(Error::invalid("detector pool request is empty"));
    }
    if dims == 0 {
        return Err(Error::invalid("pool needs a positive feature count"));
    }
    let mut out = Vec::with_capacity(total);
    for (&family, req) in request {
        for name in req.fixed.keys() {
            if !family.param_names().contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown parameter `{name}` for family {family}")));
            }
        }
        let mut rng = seed::stage_rng(seed, &format!("pool.{family}"));
        for i in 0..req.count {
            let mut draw = |name: &str, lo: usize, hi: usize| -> usize {
                let v = rng.random_range(lo..=hi);
                req.fixed.get(name).copied().unwrap_or(v)
            };
            let spec = match family {
                Family::Knn => DetectorSpec::Knn { k: draw("k", 3, 50) },
                Family::Lof => DetectorSpec::Lof { k: draw("k", 3, 50) },
                Family::Md => DetectorSpec::Md,
                Family::Rm => DetectorSpec::Rm {
                    window: draw("window", 5, 100),
                },
                Family::Hbos => DetectorSpec::Hbos { bins: draw("bins", 5, 50) },
                Family::Pca => DetectorSpec::Pca {
                    components: draw("components", 1, dims),
                },
                Family::Iforest => DetectorSpec::Iforest {
                    trees: draw("trees", 50, 150),
                    subsample: draw("subsample", 64, 256),
                    seed: seed::derive_indexed(seed, "pool.iforest.seed", i as u64),
                },
                Family::Kmeans => DetectorSpec::Kmeans {
                    clusters: draw("clusters", 2, 10),
                    seed: seed::derive_indexed(seed, "pool.kmeans.seed", i as u64),
                },
            };
            spec.validate(dims)?;
            out.push(DetectorConfig {
                id: format!("{family}_{i}"),
                spec,
            });
        }
    }
    Ok(out)
}

/// A fitted model producing one raw score per timestep; larger is more
/// anomalous.
pub trait Scorer: Send + Sync + fmt::Debug {
    fn dims(&self) -> usize;
    fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>>;
}

/// Fits a [`Scorer`] from clean training data. Implement this to add a
/// detector family outside the built-in pool.
pub trait DetectorFactory: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn fit(&self, train: &TimeSeries) -> Result<Box<dyn Scorer>>;
}

impl DetectorFactory for DetectorConfig {
    fn id(&self) -> &str {
        &self.id
    }

    fn fit(&self, train: &TimeSeries) -> Result<Box<dyn Scorer>> {
        self.spec.validate(train.dims())?;
        Ok(match self.spec {
            DetectorSpec::Knn { k } => Box::new(Knn::fit(train, k)?),
            DetectorSpec::Lof { k } => Box::new(Lof::fit(train, k)?),
            DetectorSpec::Md => Box::new(Mahalanobis::fit(train)?),
            DetectorSpec::Rm { window } => Box::new(RollingMean::fit(train, window)?),
            DetectorSpec::Hbos { bins } => Box::new(Hbos::fit(train, bins)?),
            DetectorSpec::Pca { components } => Box::new(PcaDetector::fit(train, components)?),
            DetectorSpec::Iforest { trees, subsample, seed } => {
                Box::new(IsolationForest::fit(train, trees, subsample, seed)?)
            }
            DetectorSpec::Kmeans { clusters, seed } => Box::new(KMeansDetector::fit(train, clusters, seed)?),
        })
    }
}

/// One pool slot: a built-in configuration or a plugged-in factory.
#[derive(Debug, Clone)]
pub enum PoolMember {
    Builtin(DetectorConfig),
    Plugin(Arc<dyn DetectorFactory>),
}

impl PoolMember {
    pub fn id(&self) -> &str {
        match self {
            PoolMember::Builtin(c) => &c.id,
            PoolMember::Plugin(p) => p.id(),
        }
    }

    pub fn config(&self) -> Option<&DetectorConfig> {
        match self {
            PoolMember::Builtin(c) => Some(c),
            PoolMember::Plugin(_) => None,
        }
    }

    fn factory(&self) -> &dyn DetectorFactory {
        match self {
            PoolMember::Builtin(c) => c,
            PoolMember::Plugin(p) => p.as_ref(),
        }
    }

    pub fn fit(&self, train: &TimeSeries) -> Result<FittedDetector> {
        let scorer: Arc<dyn Scorer> = Arc::from(self.factory().fit(train)?);
        let raw = scorer.raw_scores(train)?;
        let calibration = Calibration::from_fit_scores(&raw);
        Ok(FittedDetector {
            id: self.id().to_owned(),
            scorer,
            calibration,
        })
    }
}

impl From<DetectorConfig> for PoolMember {
    fn from(c: DetectorConfig) -> Self {
        PoolMember::Builtin(c)
    }
}

/// Raw-score range observed on the fit data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub min: f64,
    pub max: f64,
}

impl Calibration {
    /// Min/max over the fit scores; a zero range is widened to `(min, min + 1)`.
    pub fn from_fit_scores(raw: &[f64]) -> Self {
        let (min, max) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if !min.is_finite() || !max.is_finite() {
            return Self { min: 0.0, max: 1.0 };
        }
        if max > min {
            Self { min, max }
        } else {
            Self { min, max: min + 1.0 }
        }
    }
}

/// `clamp((raw - min) / (max - min), 0, 1)`; a zero-width calibration maps
/// everything to 0.
pub fn normalize(raw: &[f64], calibration: Calibration) -> Vec<f64> {
    let Calibration { min, max } = calibration;
    if max <= min {
        return vec![0.0; raw.len()];
    }
    let span = max - min;
    raw.iter().map(|&r| ((r - min) / span).clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone)]
pub struct FittedDetector {
    id: String,
    scorer: Arc<dyn Scorer>,
    calibration: Calibration,
}

impl FittedDetector {
    /// Wraps an already-fitted scorer.
    pub fn from_parts(id: impl Into<String>, scorer: Arc<dyn Scorer>, calibration: Calibration) -> Self {
        Self {
            id: id.into(),
            scorer,
            calibration,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dims(&self) -> usize {
        self.scorer.dims()
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    pub fn scorer(&self) -> &dyn Scorer {
        self.scorer.as_ref()
    }

    pub fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        if data.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: data.dims(),
            });
        }
        self.scorer.raw_scores(data)
    }

    /// Per-timestep scores in `[0, 1]`.
    pub fn scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        Ok(normalize(&self.raw_scores(data)?, self.calibration))
    }
}

/// Fits every pool member on the same clean data.
pub fn fit_pool(pool: &[PoolMember], train: &TimeSeries) -> Result<Vec<FittedDetector>> {
    pool.par_iter()
        .map(|m| {
            m.fit(train)
                .map_err(|e| Error::invalid(format!("fitting {}: {e}", m.id())))
        })
        .collect()
}

/// Normalized per-timestep scores, one vector per detector.
pub fn pool_scores(pool: &[FittedDetector], data: &TimeSeries) -> Result<Vec<Vec<f64>>> {
    pool.par_iter().map(|d| d.scores(data)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    #[default]
    Max,
    Mean,
}

impl Reducer {
    pub fn reduce(&self, xs: &[f64]) -> f64 {
        match self {
            Reducer::Max => xs.iter().copied().fold(0.0, f64::max),
            Reducer::Mean => xs.iter().sum::<f64>() / xs.len().max(1) as f64,
        }
    }
}

/// `rows x detectors` matrix of normalized scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    ids: Vec<String>,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_columns(ids: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if ids.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: columns.len(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("score columns differ in length"));
        }
        if columns.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("score matrix entries must lie in [0, 1]"));
        }
        let m = ids.len();
        let mut data = vec![0.0; rows * m];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * m + j] = v;
            }
        }
        Ok(Self { rows, ids, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let m = self.cols();
        &self.data[row * m..(row + 1) * m]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    /// Row-major features restricted to `cols`, in the given order.
    pub fn select(&self, cols: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            out.extend(cols.iter().map(|&j| row[j]));
        }
        out
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let m = self.cols();
        Self {
            rows: end - start,
            ids: self.ids.clone(),
            data: self.data[start * m..end * m].to_vec(),
        }
    }
}

/// Entry `(i, m)` reduces detector `m`'s normalized scores over window `i`.
/// Each detector scores the windows' parent series once.
pub fn score_matrix(pool: &[FittedDetector], windows: &[Window<'_>], reducer: Reducer) -> Result<ScoreMatrix> {
    let Some(first) = windows.first() else {
        return ScoreMatrix::from_columns(pool.iter().map(|d| d.id.clone()).collect(), &vec![Vec::new(); pool.len()]);
    };
    let series = first.series();
    if windows.iter().any(|w| !std::ptr::eq(w.series(), series)) {
        return Err(Error::invalid("windows must come from one series"));
    }
    let per_step = pool_scores(pool, series)?;
    let columns: Vec<Vec<f64>> = per_step
        .iter()
        .map(|s| windows.iter().map(|w| reducer.reduce(&s[w.start..w.end()])).collect())
        .collect();
    ScoreMatrix::from_columns(pool.iter().map(|d| d.id.clone()).collect(), &columns)
}

/// Per-timestep matrix (window width 1).
pub fn timestep_matrix(pool: &[FittedDetector], data: &TimeSeries) -> Result<ScoreMatrix> {
    let cols = pool_scores(pool, data)?;
    ScoreMatrix::from_columns(pool.iter().map(|d| d.id.clone()).collect(), &cols)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_dims(expected: usize, data: &TimeSeries) -> Result<()> {
    if data.dims() != expected {
        Err(Error::DimensionMismatch {
            expected,
            actual: data.dims(),
        })
    } else {
        Ok(())
    }
}
