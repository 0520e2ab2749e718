//! Contextual linear Thompson sampling with epsilon-greedy exploration.
//!
//! Each detector is an arm with a Bayesian ridge posterior over an
//! 8-dimensional window context. Rewards come only from SBA-injected copies
//! of the offline series, never from clean labels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::detectors::{pool_scores, FittedDetector};
use crate::error::{Error, Result};
use crate::metrics::{auc_pr_or_zero, best_f1_threshold};
use crate::perturb::{sba_augment, SbaConfig};
use crate::rank::Ranking;
use crate::seed;

pub const CONTEXT_DIM: usize = 8;
const BIAS: usize = CONTEXT_DIM - 1;

/// `[mean, std, min, max, mean |diff|, lag-1 autocorrelation, range/std,
/// 1]` of a channel-averaged window.
pub fn raw_context(w: &[f64]) -> Result<[f64; CONTEXT_DIM]> {
    if w.len() < 2 {
        return Err(Error::invalid("context window needs width >= 2"));
    }
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mad = w.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (n - 1.0);
    let acf = if var > 0.0 {
        w.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum::<f64>() / (n * var)
    } else {
        0.0
    };
    let ratio = if std > 0.0 { (max - min) / std } else { 0.0 };
    Ok([mean, std, min, max, mad, acf, ratio, 1.0])
}

/// Running (Welford) standardization of the non-bias context entries.
#[derive(Debug, Clone, Default)]
pub struct Standardizer {
    n: usize,
    mean: [f64; BIAS],
    m2: [f64; BIAS],
}

impl Standardizer {
    /// Standardizes with the statistics seen so far; entries stay 0 until
    /// two windows have been observed or while a feature is constant.
    pub fn apply(&self, raw: &[f64; CONTEXT_DIM]) -> [f64; CONTEXT_DIM] {
        let mut x = [0.0; CONTEXT_DIM];
        if self.n >= 2 {
            for i in 0..BIAS {
                let sd = (self.m2[i] / self.n as f64).sqrt();
                if sd > 0.0 {
                    x[i] = (raw[i] - self.mean[i]) / sd;
                }
            }
        }
        x[BIAS] = 1.0;
        x
    }

    pub fn observe(&mut self, raw: &[f64; CONTEXT_DIM]) {
        self.n += 1;
        for i in 0..BIAS {
            let delta = raw[i] - self.mean[i];
            self.mean[i] += delta / self.n as f64;
            self.m2[i] += delta * (raw[i] - self.mean[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Context {
    pub raw: [f64; CONTEXT_DIM],
    pub x: [f64; CONTEXT_DIM],
}

/// Emits a standardized context, then folds the window into the running
/// statistics.
#[derive(Debug, Clone, Default)]
pub struct ContextExtractor {
    stats: Standardizer,
}

impl ContextExtractor {
    pub fn extract(&mut self, channel_mean: &[f64]) -> Result<Context> {
        let raw = raw_context(channel_mean)?;
        let x = self.stats.apply(&raw);
        self.stats.observe(&raw);
        Ok(Context { raw, x })
    }
}

/// Precision `B`, accumulated `B mu` and mean `mu` of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    precision: DMatrix<f64>,
    b: DVector<f64>,
    mean: DVector<f64>,
    count: usize,
}

impl Posterior {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self {
            precision: DMatrix::identity(dim, dim) * lambda,
            b: DVector::zeros(dim),
            mean: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `B' = B + x x^T`, `mu' = B'^{-1} (B mu + x r)`.
    pub fn update(&mut self, x: &[f64], r: f64) {
        let x = DVector::from_column_slice(x);
        self.precision += &x * x.transpose();
        self.b += &x * r;
        self.mean = self
            .precision
            .clone()
            .cholesky()
            .expect("precision stays positive definite")
            .solve(&self.b);
        self.count += 1;
    }

    /// `theta ~ N(mu, B^{-1})` via `mu + L^{-T} z` where `B = L L^T`.
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let l = self.precision.clone().cholesky().expect("positive definite").l();
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        let offset = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("nonsingular triangular factor");
        &self.mean + offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    #[default]
    Multiplicative,
    Exponential,
}

impl std::str::FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplicative" => Ok(Self::Multiplicative),
            "exponential" => Ok(Self::Exponential),
            _ => Err(Error::Config(format!("unknown decay mode `{s}`"))),
        }
    }
}

impl DecayMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Multiplicative => "multiplicative",
            Self::Exponential => "exponential",
        }
    }
}

/// `eps0 * rate^t` (multiplicative) or `eps0 * exp(-kappa t)`.
pub fn anneal(eps0: f64, mode: DecayMode, rate: f64, kappa: f64, t: usize) -> f64 {
    match mode {
        DecayMode::Multiplicative => eps0 * rate.powi(t as i32),
        DecayMode::Exponential => eps0 * (-kappa * t as f64).exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinTsConfig {
    pub epsilon0: f64,
    pub decay_mode: DecayMode,
    pub decay: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub windows: usize,
    pub lambda: f64,
    pub buffer: usize,
    /// Per-arm exponential reward smoothing factor; `None` is off.
    pub smoothing: Option<f64>,
}

impl Default for LinTsConfig {
    fn default() -> Self {
        Self {
            epsilon0: 0.2,
            decay_mode: DecayMode::Multiplicative,
            decay: 0.99,
            kappa: (1.0f64 / 0.99).ln(),
            alpha: 0.7,
            windows: 50,
            lambda: 1.0,
            buffer: 5,
            smoothing: None,
        }
    }
}

impl LinTsConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon0) || !unit.contains(&self.alpha) {
            return Err(Error::Config("lints: epsilon0 and alpha must lie in [0, 1]".into()));
        }
        if self.windows == 0 || self.buffer == 0 || !(self.lambda > 0.0) {
            return Err(Error::Config("lints: windows, buffer >= 1 and lambda > 0 required".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || !(self.kappa >= 0.0) {
            return Err(Error::Config("lints: decay in (0, 1], kappa >= 0 required".into()));
        }
        if let Some(b) = self.smoothing {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config("lints.smoothing must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn epsilon(&self, t: usize) -> f64 {
        anneal(self.epsilon0, self.decay_mode, self.decay, self.kappa, t)
    }
}

/// With probability `eps` a uniform arm, otherwise the argmax of
/// `theta_m . x` over one posterior draw per arm (ties to the lowest index).
pub fn select_arm(posteriors: &[Posterior], x: &[f64], eps: f64, rng: &mut impl Rng) -> usize {
    if posteriors.len() <= 1 {
        return 0;
    }
    if rng.random::<f64>() < eps {
        return rng.random_range(0..posteriors.len());
    }
    let x = DVector::from_column_slice(x);
    let mut best = (0, f64::NEG_INFINITY);
    for (m, p) in posteriors.iter().enumerate() {
        let v = p.sample(rng).dot(&x);
        if v > best.1 {
            best = (m, v);
        }
    }
    best.0
}

/// `alpha * F1(current window) + (1 - alpha) * AUC-PR(buffer)`; the buffer
/// term is 0 when it holds no positives.
pub fn compute_reward(
    alpha: f64,
    window_scores: &[f64],
    window_labels: &[u8],
    buffer_scores: &[f64],
    buffer_labels: &[u8],
) -> Result<f64> {
    let (_, f1) = best_f1_threshold(window_scores, window_labels)?;
    let auc = auc_pr_or_zero(buffer_scores, buffer_labels);
    Ok(alpha * f1 + (1.0 - alpha) * auc)
}

/// The sequential bandit state, independent of where rewards come from.
#[derive(Debug, Clone)]
pub struct Bandit {
    cfg: LinTsConfig,
    posteriors: Vec<Posterior>,
    smoothed: Vec<Option<f64>>,
    t: usize,
}

impl Bandit {
    pub fn new(arms: usize, dim: usize, cfg: LinTsConfig) -> Result<Self> {
        cfg.validate()?;
        if arms == 0 {
            return Err(Error::invalid("bandit needs at least one arm"));
        }
        Ok(Self {
            cfg,
            posteriors: vec![Posterior::new(dim, cfg.lambda); arms],
            smoothed: vec![None; arms],
            t: 0,
        })
    }

    pub fn posteriors(&self) -> &[Posterior] {
        &self.posteriors
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon(self.t)
    }

    pub fn select(&self, x: &[f64], rng: &mut impl Rng) -> usize {
        select_arm(&self.posteriors, x, self.epsilon(), rng)
    }

    /// Records the reward for `arm` and advances the annealing clock.
    /// Returns the reward actually fed to the posterior.
    pub fn update(&mut self, arm: usize, x: &[f64], r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        let r = match self.cfg.smoothing {
            Some(beta) => {
                let s = self.smoothed[arm].map_or(r, |prev| beta * r + (1.0 - beta) * prev);
                self.smoothed[arm] = Some(s);
                s
            }
            None => r,
        };
        self.posteriors[arm].update(x, r);
        self.t += 1;
        r
    }

    /// Arms by `mu_m . xbar` descending, ties by observation count
    /// (more first) then index; never-pulled arms last in index order.
    /// Returns `(order, projections)`.
    pub fn ranking(&self, xbar: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let x = DVector::from_column_slice(xbar);
        let proj: Vec<f64> = self.posteriors.iter().map(|p| p.mean.dot(&x)).collect();
        let mut order: Vec<usize> = (0..self.posteriors.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&self.posteriors[a], &self.posteriors[b]);
            (pb.count > 0)
                .cmp(&(pa.count > 0))
                .then_with(|| {
                    if pa.count > 0 && pb.count > 0 {
                        proj[b].total_cmp(&proj[a]).then(pb.count.cmp(&pa.count))
                    } else {
                        std::cmp::Ordering::Equal
                    }
                })
                .then(a.cmp(&b))
        });
        (order, proj)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pull {
    pub step: usize,
    pub window: usize,
    pub arm: String,
    pub epsilon: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct LinTsOutcome {
    pub ranking: Ranking,
    pub pulls: Vec<Pull>,
    pub mean_context: [f64; CONTEXT_DIM],
}

/// Runs `cfg.windows` bandit steps over windows of width
/// `max(2, T / cfg.windows)` (cycled), rewarding the chosen detector on an
/// SBA-injected copy of `offline`.
pub fn run_lints(
    cfg: &LinTsConfig,
    sba: &SbaConfig,
    pool: &[FittedDetector],
    offline: &TimeSeries,
    seed: u64,
) -> Result<LinTsOutcome> {
    cfg.validate()?;
    let t_len = offline.len();
    let width = (t_len / cfg.windows).max(2);
    let count = t_len / width;
    if count < 2 {
        return Err(Error::insufficient(format!(
            "LinTS needs at least 2 windows, series of {t_len} gives {count}"
        )));
    }
    let mut sba_rng = seed::stage_rng(seed, "lints.sba");
    let injected = sba_augment(offline, sba, &mut sba_rng)?;
    let labels = injected.series.labels().expect("SBA output is labelled");
    let scores = pool_scores(pool, &injected.series)?;
    let channel = offline.channel_mean();

    let mut bandit = Bandit::new(pool.len(), CONTEXT_DIM, *cfg)?;
    let mut extractor = ContextExtractor::default();
    let mut rng = seed::stage_rng(seed, "lints.select");
    let mut recent: Vec<usize> = Vec::with_capacity(cfg.buffer);
    let mut xsum = [0.0; CONTEXT_DIM];
    let mut pulls = Vec::with_capacity(cfg.windows);
    for step in 0..cfg.windows {
        let w = step % count;
        let range = w * width..(w + 1) * width;
        let ctx = extractor.extract(&channel[range.clone()])?;
        for (s, v) in xsum.iter_mut().zip(&ctx.x) {
            *s += v;
        }
        let eps = bandit.epsilon();
        let arm = bandit.select(&ctx.x, &mut rng);

        if recent.len() == cfg.buffer {
            recent.remove(0);
        }
        recent.push(w);
        let s = &scores[arm];
        let buf_scores: Vec<f64> = recent.iter().flat_map(|&i| s[i * width..(i + 1) * width].iter().copied()).collect();
        let buf_labels: Vec<u8> = recent.iter().flat_map(|&i| labels[i * width..(i + 1) * width].iter().copied()).collect();
        let r = compute_reward(cfg.alpha, &s[range.clone()], &labels[range], &buf_scores, &buf_labels)?;
        let fed = bandit.update(arm, &ctx.x, r);
        pulls.push(Pull {
            step,
            window: w,
            arm: pool[arm].id().to_string(),
            epsilon: eps,
            reward: fed,
        });
    }
    let xbar = xsum.map(|v| v / cfg.windows as f64);
    let (order, proj) = bandit.ranking(&xbar);
    let ranking = Ranking::with_scores(
        order.iter().map(|&m| pool[m].id().to_string()).collect(),
        order.iter().map(|&m| proj[m]).collect(),
    );
    Ok(LinTsOutcome {
        ranking,
        pulls,
        mean_context: xbar,
    })
}
