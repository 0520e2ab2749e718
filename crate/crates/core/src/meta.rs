//! Level-1 meta-learners over stacked detector scores: random forest (the
//! default), logistic regression and a linear SVM.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaKind {
    #[default]
    Rf,
    Lr,
    Svm,
}

impl std::str::FromStr for MetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(Self::Rf),
            "lr" => Ok(Self::Lr),
            "svm" => Ok(Self::Svm),
            _ => Err(Error::Config(format!("unknown meta-learner `{s}` (rf, lr, svm)"))),
        }
    }
}

impl MetaKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rf => "rf",
            Self::Lr => "lr",
            Self::Svm => "svm",
        }
    }
}

/// Full-batch gradient descent settings for the linear learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 8,
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub kind: MetaKind,
    pub lr: LinearParams,
    pub svm: LinearParams,
    pub rf: ForestParams,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            kind: MetaKind::Rf,
            lr: LinearParams {
                learning_rate: 0.1,
                epochs: 200,
                l2: 1e-4,
            },
            svm: LinearParams {
                learning_rate: 0.01,
                epochs: 200,
                l2: 1e-3,
            },
            rf: ForestParams::default(),
        }
    }
}

impl MetaConfig {
    pub fn with_kind(kind: MetaKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("lr", &self.lr), ("svm", &self.svm)] {
            if p.epochs == 0 || !(p.learning_rate > 0.0) || !(p.l2 >= 0.0) {
                return Err(Error::Config(format!(
                    "meta.{name}: epochs >= 1, learning_rate > 0, l2 >= 0 required"
                )));
            }
        }
        if self.rf.trees == 0 || self.rf.max_depth == 0 || self.rf.min_leaf == 0 {
            return Err(Error::Config("meta.rf: trees, max_depth, min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense row-major `rows x cols` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Features {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged feature rows"));
        }
        Self::new(rows.concat(), rows.len(), cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Constant(f64),
    Linear { w: Vec<f64>, b: f64 },
    Forest(Vec<Tree>),
}

/// A trained meta-learner; predicts only on `features()`-wide inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMeta {
    kind: MetaKind,
    features: usize,
    model: Model,
}

impl TrainedMeta {
    pub fn kind(&self) -> MetaKind {
        self.kind
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Linear model with the given weights (LR/SVM semantics).
    pub fn linear(kind: MetaKind, w: Vec<f64>, b: f64) -> Self {
        Self {
            kind,
            features: w.len(),
            model: Model::Linear { w, b },
        }
    }

    pub fn predict(&self, x: &Features) -> Result<Vec<f64>> {
        if x.cols() != self.features {
            return Err(Error::DimensionMismatch {
                expected: self.features,
                actual: x.cols(),
            });
        }
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.model {
            Model::Constant(p) => *p,
            Model::Linear { w, b } => sigmoid(dot(w, row) + b),
            Model::Forest(trees) => {
                let votes = trees.iter().filter(|t| t.vote(row)).count();
                votes as f64 / trees.len() as f64
            }
        }
    }
}

pub fn train_meta(cfg: &MetaConfig, x: &Features, y: &[u8], seed: u64) -> Result<TrainedMeta> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::invalid("meta-learner needs at least one row and one feature"));
    }
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    let positives = y.iter().filter(|&&v| v != 0).count();
    if positives == 0 || positives == y.len() {
        // single class: constant predictor at the observed prior
        return Ok(TrainedMeta {
            kind: cfg.kind,
            features: x.cols(),
            model: Model::Constant(positives as f64 / y.len() as f64),
        });
    }
    let model = match cfg.kind {
        MetaKind::Lr => {
            let (w, b) = fit_linear(x, y, cfg.lr, lr_loss_grad);
            Model::Linear { w, b }
        }
        MetaKind::Svm => {
            let (w, b) = fit_linear(x, y, cfg.svm, hinge_loss_grad);
            Model::Linear { w, b }
        }
        MetaKind::Rf => {
            let rows: Vec<usize> = (0..x.rows()).collect();
            let feats: Vec<usize> = (0..x.cols()).collect();
            Model::Forest(train_forest(x, y, cfg.rf, seed, &rows, &feats))
        }
    };
    Ok(TrainedMeta {
        kind: cfg.kind,
        features: x.cols(),
        model,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type LossGrad = fn(&[f64], f64, &Features, &[u8], f64) -> (f64, Vec<f64>, f64);

fn fit_linear(x: &Features, y: &[u8], p: LinearParams, loss_grad: LossGrad) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    for _ in 0..p.epochs {
        let (_, gw, gb) = loss_grad(&w, b, x, y, p.l2);
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= p.learning_rate * gi;
        }
        b -= p.learning_rate * gb;
    }
    (w, b)
}

/// Mean log-loss plus `l2/2 * |w|^2` (bias unpenalized) and its gradient.
pub fn lr_loss_grad(w: &[f64], b: f64, x: &Features, y: &[u8], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for i in 0..x.rows() {
        let row = x.row(i);
        let z = dot(w, row) + b;
        let t = f64::from(y[i]);
        // log(1 + e^z) - t z, stable for large |z|
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid(z) - t;
        for (g, &v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * l2 / 2.0;
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (loss / n + reg, gw, gb / n)
}

/// Mean hinge loss with labels mapped to +-1, plus `l2/2 * |w|^2`; a
/// subgradient at the hinge.
fn hinge_loss_grad(w: &[f64], b: f64, x: &Features, y: &[u8], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for i in 0..x.rows() {
        let row = x.row(i);
        let t = if y[i] != 0 { 1.0 } else { -1.0 };
        let margin = t * (dot(w, row) + b);
        if margin < 1.0 {
            loss += 1.0 - margin;
            for (g, &v) in gw.iter_mut().zip(row) {
                *g -= t * v;
            }
            gb -= t;
        }
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * l2 / 2.0;
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (loss / n + reg, gw, gb / n)
}

#[derive(Debug, Clone, PartialEq)]
enum Tree {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Tree>,
        right: Box<Tree>,
    },
}

impl Tree {
    fn vote(&self, row: &[f64]) -> bool {
        let mut node = self;
        loop {
            match node {
                Tree::Leaf(p) => return *p > 0.5,
                Tree::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }
}

/// `rows[i]` / `feats[j]` map logical row and feature ids to physical ones.
/// Bootstraps and feature draws happen in logical space, so permuting the
/// physical layout together with the maps reproduces the same forest.
fn train_forest(x: &Features, y: &[u8], p: ForestParams, seed: u64, rows: &[usize], feats: &[usize]) -> Vec<Tree> {
    let n = rows.len();
    let mtry = ((feats.len() as f64).sqrt().floor() as usize).max(1);
    (0..p.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "rf.tree", t as u64));
            let mut idx: Vec<usize> = (0..n).map(|_| rows[rng.random_range(0..n)]).collect();
            let ctx = TreeCtx {
                x,
                y,
                p,
                feats,
                mtry,
            };
            ctx.grow(&mut idx, 0, &mut rng)
        })
        .collect()
}

struct TreeCtx<'a> {
    x: &'a Features,
    y: &'a [u8],
    p: ForestParams,
    feats: &'a [usize],
    mtry: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let q = pos as f64 / n as f64;
    2.0 * q * (1.0 - q)
}

impl TreeCtx<'_> {
    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut impl Rng) -> Tree {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i] != 0).count();
        let frac = pos as f64 / n as f64;
        if depth >= self.p.max_depth || pos == 0 || pos == n || n < 2 * self.p.min_leaf {
            return Tree::Leaf(frac);
        }
        // draw features in random order; look past the first `mtry` only
        // while no valid split has been found (constant columns)
        let order = sample(rng, self.feats.len(), self.feats.len()).into_vec();

        let parent = gini(pos, n) * n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
        for (tried, &lf) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            let f = self.feats[lf];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(pairs[k - 1].1 != 0);
                if pairs[k].0 == pairs[k - 1].0 || k < self.p.min_leaf || n - k < self.p.min_leaf {
                    continue;
                }
                let impurity = gini(left_pos, k) * k as f64 + gini(pos - left_pos, n - k) * (n - k) as f64;
                // zero-gain splits are allowed (XOR-like targets need them)
                if impurity <= parent + 1e-12 && best.is_none_or(|b| impurity < b.0) {
                    best = Some((impurity, f, (pairs[k - 1].0 + pairs[k].0) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return Tree::Leaf(frac);
        };
        let mut split = 0;
        for k in 0..n {
            if self.x.get(idx[k], feature) <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        Tree::Split {
            feature,
            threshold,
            left: Box::new(self.grow(l, depth + 1, rng)),
            right: Box::new(self.grow(r, depth + 1, rng)),
        }
    }
}
