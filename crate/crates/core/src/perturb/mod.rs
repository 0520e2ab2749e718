//! Robustness stress tests. Each one scores the already-fitted pool on a
//! perturbed copy of the clean series and ranks detectors by best-threshold
//! event F1 against that copy's labels. No detector is refit here.

mod gan;
pub mod mlp;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::detectors::{pool_scores, FittedDetector};
use crate::error::{Error, Result};
use crate::metrics::best_f1_threshold;
use crate::rank::Ranking;
use crate::seed;

pub use gan::{
    ambiguity, borderline_points, discriminator, discriminator_bce, generator, select_borderline, surrogate_label,
    train_gan, Borderline, EpochLoss, GanConfig, Scaler, TrainedGan,
};

/// `ceil(rho * t)`.
pub fn injection_count(rho: f64, t: usize) -> usize {
    (rho * t as f64).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub series: TimeSeries,
    /// Positions of the inserted rows in the augmented series, ascending.
    pub indices: Vec<usize>,
}

/// Inserts `points` after every `floor(T/B)` original samples (the k-th,
/// 1-based, goes before original index `k * floor(T/B)`, so a single point
/// lands at the end). Original labels are kept, or zero when the series is
/// unlabeled; injected rows carry `labels`.
pub fn inject(series: &TimeSeries, points: &[Vec<f64>], labels: &[u8]) -> Result<Injection> {
    let t = series.len();
    let b = points.len();
    if b == 0 {
        return Err(Error::invalid("nothing to inject"));
    }
    if b > t {
        return Err(Error::invalid(format!("cannot inject {b} points into {t} samples")));
    }
    if labels.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            actual: labels.len(),
        });
    }
    let d = series.dims();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: p.len(),
        });
    }
    let gap = t / b;
    let base_labels = series.labels().map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; t]);
    let mut values = Vec::with_capacity((t + b) * d);
    let mut out_labels = Vec::with_capacity(t + b);
    let mut indices = Vec::with_capacity(b);
    let mut next = 0;
    for orig in 0..=t {
        while next < b && (next + 1) * gap == orig {
            indices.push(out_labels.len());
            values.extend_from_slice(&points[next]);
            out_labels.push(labels[next]);
            next += 1;
        }
        if orig < t {
            values.extend_from_slice(series.row(orig));
            out_labels.push(base_labels[orig]);
        }
    }
    let series = TimeSeries::new(format!("{}+inj", series.name()), values, d, Some(out_labels))?;
    Ok(Injection { series, indices })
}

/// Drops the rows at `indices`, restoring the pre-injection series.
pub fn remove_injected(aug: &TimeSeries, indices: &[usize]) -> Result<TimeSeries> {
    let mut drop = vec![false; aug.len()];
    for &i in indices {
        *drop
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("injection index {i} out of range")))? = true;
    }
    let keep: Vec<usize> = (0..aug.len()).filter(|&i| !drop[i]).collect();
    let values = keep.iter().flat_map(|&i| aug.row(i).iter().copied()).collect();
    let labels = aug.labels().map(|l| keep.iter().map(|&i| l[i]).collect());
    TimeSeries::new(aug.name().trim_end_matches("+inj"), values, aug.dims(), labels)
}

/// Mean and standard deviation per feature over the trailing `w` rows
/// before `p` (the following rows when fewer than two precede it). A zero
/// deviation falls back to the whole-series deviation, then to 1.
fn local_moments(series: &TimeSeries, p: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let t = series.len();
    let lo = p.saturating_sub(w);
    let rows: Vec<usize> = if p - lo >= 2 {
        (lo..p).collect()
    } else {
        (p + 1..(p + 1 + w).min(t)).collect()
    };
    let d = series.dims();
    let moments = |idx: &[usize], j: usize| {
        let n = idx.len().max(1) as f64;
        let mean = idx.iter().map(|&i| series.row(i)[j]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (series.row(i)[j] - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let all: Vec<usize> = (0..t).collect();
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for j in 0..d {
        let (m, mut s) = moments(&rows, j);
        if !(s > 0.0) {
            s = moments(&all, j).1;
        }
        if !(s > 0.0) {
            s = 1.0;
        }
        mean.push(m);
        std.push(s);
    }
    (mean, std)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbaConfig {
    pub fraction: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub context: usize,
}

impl Default for SbaConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            gamma_min: 0.95,
            gamma_max: 1.05,
            context: 50,
        }
    }
}

impl SbaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config("sba.fraction must lie in (0, 1)".into()));
        }
        if !(self.gamma_min <= self.gamma_max) || !(self.gamma_min > 0.0) {
            return Err(Error::Config("sba: need 0 < gamma_min <= gamma_max".into()));
        }
        if self.context == 0 {
            return Err(Error::Config("sba.context must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbaDraw {
    pub index: usize,
    pub s: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbaResult {
    pub series: TimeSeries,
    pub draws: Vec<SbaDraw>,
}

impl SbaResult {
    pub fn indices(&self) -> Vec<usize> {
        self.draws.iter().map(|d| d.index).collect()
    }
}

/// Replaces `ceil(fraction * T)` evenly spaced samples with
/// `local mean + N(0, sigma_j^2 s^2)`, `s ~ U[gamma_min, gamma_max]`,
/// labelled 1 iff `s > 1`. Context statistics come from the clean input.
pub fn sba_augment(series: &TimeSeries, cfg: &SbaConfig, rng: &mut impl Rng) -> Result<SbaResult> {
    cfg.validate()?;
    let t = series.len();
    if t < cfg.context {
        return Err(Error::insufficient(format!(
            "SBA needs at least {} samples (context), got {t}",
            cfg.context
        )));
    }
    let b = injection_count(cfg.fraction, t).min(t);
    let d = series.dims();
    let mut values = series.values().to_vec();
    let mut labels = series.labels().map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; t]);
    let mut draws = Vec::with_capacity(b);
    for k in 0..b {
        let p = (2 * k + 1) * t / (2 * b);
        let (mean, std) = local_moments(series, p, cfg.context);
        let s = if cfg.gamma_max > cfg.gamma_min {
            rng.random_range(cfg.gamma_min..=cfg.gamma_max)
        } else {
            cfg.gamma_min
        };
        for j in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            values[p * d + j] = mean[j] + z * std[j] * s;
        }
        let label = u8::from(s > 1.0);
        labels[p] = label;
        draws.push(SbaDraw { index: p, s, label });
    }
    let series = TimeSeries::new(format!("{}+sba", series.name()), values, d, Some(labels))?;
    Ok(SbaResult { series, draws })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: usize,
    /// Background noise as a fraction of each feature's standard deviation.
    pub noise: f64,
    pub magnitude_min: f64,
    pub magnitude_max: f64,
    pub anomalies: usize,
    pub context: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            noise: 0.1,
            magnitude_min: 0.5,
            magnitude_max: 3.0,
            anomalies: 10,
            context: 50,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.anomalies == 0 || self.context == 0 {
            return Err(Error::Config("mc: trials, anomalies, context must be >= 1".into()));
        }
        if !(self.magnitude_min <= self.magnitude_max) || !(self.noise >= 0.0) {
            return Err(Error::Config("mc: need magnitude_min <= magnitude_max and noise >= 0".into()));
        }
        Ok(())
    }
}

/// One Monte-Carlo copy: background noise everywhere plus `anomalies`
/// additive shocks of `s * local sigma` (random sign per feature) at
/// distinct uniform positions, which are labelled 1.
pub fn mc_trial(series: &TimeSeries, cfg: &McConfig, rng: &mut impl Rng) -> Result<TimeSeries> {
    let t = series.len();
    let d = series.dims();
    let mut values = series.values().to_vec();
    let mut labels = series.labels().map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; t]);
    if cfg.noise > 0.0 {
        for j in 0..d {
            let col = series.column(j);
            let mean = col.iter().sum::<f64>() / t as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
            if sd > 0.0 {
                let noise = Normal::new(0.0, cfg.noise * sd).expect("finite std");
                for i in 0..t {
                    values[i * d + j] += noise.sample(rng);
                }
            }
        }
    }
    let count = cfg.anomalies.min(t);
    let mut positions = rand::seq::index::sample(rng, t, count).into_vec();
    positions.sort_unstable();
    for p in positions {
        let (_, std) = local_moments(series, p, cfg.context);
        let s = if cfg.magnitude_max > cfg.magnitude_min {
            rng.random_range(cfg.magnitude_min..=cfg.magnitude_max)
        } else {
            cfg.magnitude_min
        };
        for j in 0..d {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            values[p * d + j] += sign * s * std[j];
        }
        labels[p] = 1;
    }
    TimeSeries::new(format!("{}+mc", series.name()), values, d, Some(labels))
}

/// Best-threshold event F1 of every detector on a labelled copy.
pub fn pool_f1(pool: &[FittedDetector], copy: &TimeSeries) -> Result<Vec<f64>> {
    let labels = copy
        .labels()
        .ok_or_else(|| Error::invalid("robustness copy must carry labels"))?;
    pool_scores(pool, copy)?
        .iter()
        .map(|s| best_f1_threshold(s, labels).map(|(_, f1)| f1))
        .collect()
}

fn ids(pool: &[FittedDetector]) -> Vec<String> {
    pool.iter().map(|d| d.id().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome {
    pub ranking: Ranking,
    /// `trials x detectors`.
    pub trial_f1: Vec<Vec<f64>>,
}

pub fn run_mc(pool: &[FittedDetector], series: &TimeSeries, cfg: &McConfig, seed: u64) -> Result<McOutcome> {
    cfg.validate()?;
    let trial_f1: Vec<Vec<f64>> = (0..cfg.trials)
        .map(|r| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "mc.trial", r as u64));
            pool_f1(pool, &mc_trial(series, cfg, &mut rng)?)
        })
        .collect::<Result<_>>()?;
    let mean: Vec<f64> = (0..pool.len())
        .map(|m| trial_f1.iter().map(|t| t[m]).sum::<f64>() / cfg.trials as f64)
        .collect();
    Ok(McOutcome {
        ranking: Ranking::from_scores(&ids(pool), &mean),
        trial_f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub gan: GanConfig,
    pub sba: SbaConfig,
    pub mc: McConfig,
}

#[derive(Debug, Clone)]
pub struct RobustnessOutcome {
    pub gan: Ranking,
    pub sba: Ranking,
    pub mc: Ranking,
    pub gan_history: Vec<EpochLoss>,
    pub gan_indices: Vec<usize>,
    pub sba_draws: Vec<SbaDraw>,
}

/// Runs the three tests concurrently on independent copies of `clean`.
/// Labels on `clean` (if any) fill the non-injected positions; pass an
/// unlabeled series to stay label-free.
pub fn robustness_rankings(
    pool: &[FittedDetector],
    clean: &TimeSeries,
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<RobustnessOutcome> {
    if pool.is_empty() {
        return Err(Error::invalid("empty detector pool"));
    }
    let names = ids(pool);
    let gan_branch = || -> Result<_> {
        let (border, history) = borderline_points(clean, &cfg.gan, seed::derive(seed, "robust.gan"))?;
        let inj = inject(clean, &border.points, &border.labels)?;
        let f1 = pool_f1(pool, &inj.series)?;
        Ok((Ranking::from_scores(&names, &f1), history, inj.indices))
    };
    let sba_branch = || -> Result<_> {
        let mut rng = seed::stage_rng(seed, "robust.sba");
        let sba = sba_augment(clean, &cfg.sba, &mut rng)?;
        let f1 = pool_f1(pool, &sba.series)?;
        Ok((Ranking::from_scores(&names, &f1), sba.draws))
    };
    let mc_branch = || run_mc(pool, clean, &cfg.mc, seed::derive(seed, "robust.mc"));
    let (gan, (sba, mc)) = rayon::join(gan_branch, || rayon::join(sba_branch, mc_branch));
    let (gan, gan_history, gan_indices) = gan.map_err(|e| e.in_stage("gan"))?;
    let (sba, sba_draws) = sba.map_err(|e| e.in_stage("sba"))?;
    let mc = mc.map_err(|e| e.in_stage("mc"))?;
    Ok(RobustnessOutcome {
        gan,
        sba,
        mc: mc.ranking,
        gan_history,
        gan_indices,
        sba_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{Calibration, Scorer};
    use std::sync::Arc;

    fn ramp(t: usize) -> TimeSeries {
        TimeSeries::univariate("r", (0..t).map(|i| i as f64).collect(), None).unwrap()
    }

    #[test]
    fn inject_accounting() {
        let s = ramp(100);
        let b = injection_count(0.1, 100);
        assert_eq!(b, 10);
        let pts: Vec<Vec<f64>> = (0..b).map(|k| vec![-1.0 - k as f64]).collect();
        let inj = inject(&s, &pts, &[1; 10]).unwrap();
        assert_eq!(inj.series.len(), 110);
        assert_eq!(inj.indices, (0..10).map(|k| 10 * (k + 1) + k).collect::<Vec<_>>());
        assert_eq!(inj.series.labels().unwrap().iter().filter(|&&l| l == 1).count(), 10);
        let back = remove_injected(&inj.series, &inj.indices).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(back.labels(), Some(&[0u8; 100][..]));
    }

    #[test]
    fn inject_single_point_appends() {
        let s = ramp(7);
        let inj = inject(&s, &[vec![99.0]], &[0]).unwrap();
        assert_eq!(inj.indices, vec![7]);
        assert!(inject(&s, &[], &[]).is_err());
        assert!(inject(&ramp(1), &[vec![0.0], vec![0.0]], &[0, 0]).is_err());
    }

    #[test]
    fn sba_counts_and_labels() {
        let s = TimeSeries::univariate("s", (0..200).map(|i| (i as f64 * 0.3).sin()).collect(), None).unwrap();
        let mut rng = seed::rng(4);
        let out = sba_augment(&s, &SbaConfig::default(), &mut rng).unwrap();
        assert_eq!(out.draws.len(), 20);
        assert_eq!(out.series.len(), 200);
        for d in &out.draws {
            assert_eq!(d.label, u8::from(d.s > 1.0));
            assert_eq!(out.series.labels().unwrap()[d.index], d.label);
            assert!((0.95..=1.05).contains(&d.s));
        }
        let mut idx = out.indices();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(sba_augment(&ramp(10), &SbaConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn sba_boundary_labels() {
        let s = ramp(60);
        let at = |g: f64| {
            let cfg = SbaConfig {
                gamma_min: g,
                gamma_max: g,
                ..SbaConfig::default()
            };
            sba_augment(&s, &cfg, &mut seed::rng(0)).unwrap().draws[0].label
        };
        assert_eq!(at(1.0), 0);
        assert_eq!(at(1.05), 1);
    }

    /// Scores each timestep by its stored label: an oracle when the labels
    /// match the copy being scored.
    #[derive(Debug)]
    struct Lookup(Vec<f64>);
    impl Scorer for Lookup {
        fn dims(&self) -> usize {
            1
        }
        fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
            Ok(data.labels().map_or_else(
                || self.0.clone(),
                |l| l.iter().map(|&v| f64::from(v)).collect(),
            ))
        }
    }

    #[derive(Debug)]
    struct Flat;
    impl Scorer for Flat {
        fn dims(&self) -> usize {
            1
        }
        fn raw_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
            Ok(vec![0.0; data.len()])
        }
    }

    fn oracle_pool() -> Vec<FittedDetector> {
        let cal = Calibration { min: 0.0, max: 1.0 };
        vec![
            FittedDetector::from_parts("flat", Arc::new(Flat), cal),
            FittedDetector::from_parts("oracle", Arc::new(Lookup(Vec::new())), cal),
        ]
    }

    #[test]
    fn mc_oracle_ranks_first() {
        let s = TimeSeries::univariate("s", (0..300).map(|i| (i as f64 * 0.2).sin()).collect(), None).unwrap();
        for seed in [1, 2] {
            let out = run_mc(&oracle_pool(), &s, &McConfig::default(), seed).unwrap();
            assert_eq!(out.ranking.ids, vec!["oracle", "flat"]);
            assert_eq!(out.ranking.scores.as_ref().unwrap()[0], 1.0);
        }
        let one = McConfig {
            trials: 1,
            ..McConfig::default()
        };
        let out = run_mc(&oracle_pool(), &s, &one, 3).unwrap();
        assert_eq!(out.trial_f1.len(), 1);
    }

    #[test]
    fn robustness_oracle_dominates() {
        let s = TimeSeries::univariate("s", (0..300).map(|i| (i as f64 * 0.2).sin()).collect(), None).unwrap();
        let before = s.clone();
        let cfg = RobustnessConfig {
            gan: GanConfig {
                epochs: 2,
                hidden: 16,
                batch: 32,
                ..GanConfig::default()
            },
            ..RobustnessConfig::default()
        };
        let out = robustness_rankings(&oracle_pool(), &s, &cfg, 5).unwrap();
        assert_eq!(s, before);
        // GAN surrogate labels can be all zero; the oracle is never below flat
        for r in [&out.sba, &out.mc] {
            assert_eq!(r.top(), Some("oracle"));
        }
        let g = out.gan.scores.as_ref().unwrap();
        assert!(out.gan.position("oracle") < out.gan.position("flat") || g[0] == g[1]);
        assert_eq!(out.gan_indices.len(), 30);
    }
}
