//! Streaming deployment of both branches with periodic re-selection over a
//! constant-size training buffer.
//!
//! The buffer starts as the offline split. Windows overlap heavily, so only
//! samples not seen in an earlier window are queued; at each trigger the
//! queue is appended and the same number of samples is dropped from the
//! head.

use serde::{Deserialize, Serialize};

use crate::data::{TimeSeries, WindowSpec};
use crate::detectors::FittedDetector;
use crate::error::{Error, Result};
use crate::ga::{self, Subset};
use crate::meta::TrainedMeta;
use crate::metrics::{binarize, event_f1};

/// Rows of stream history prepended when scoring a window, so trailing
/// detectors see more than `w` samples.
pub const SCORING_CONTEXT: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub period: usize,
    pub reopt: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { period: 5, reopt: true }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("online.period must be >= 1".into()));
        }
        Ok(())
    }
}

/// `w = max(2, floor(0.05 L))`, `step = max(1, round(0.05 w))`.
pub fn window_sizing(online_len: usize) -> Result<WindowSpec> {
    let w = ((0.05 * online_len as f64).floor() as usize).max(2);
    let step = ((0.05 * w as f64).round() as usize).max(1);
    if online_len < w {
        return Err(Error::insufficient(format!(
            "online split of {online_len} samples is shorter than one window ({w})"
        )));
    }
    WindowSpec::new(w, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Ensemble,
    Single,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Ensemble => "ensemble",
            Branch::Single => "single",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub subset: Subset,
    pub ids: Vec<String>,
    pub meta: TrainedMeta,
    pub threshold: f64,
    pub fitness: f64,
    /// Validation AUC-PR, the designation tie-breaker.
    pub auc_pr: f64,
}

#[derive(Debug, Clone)]
pub struct SingleModel {
    /// Index into the fitted pool.
    pub index: usize,
    pub id: String,
    pub threshold: f64,
    pub fitness: f64,
    pub auc_pr: f64,
}

/// Models in service: the fitted pool plus both branch selections.
#[derive(Debug, Clone)]
pub struct Deployed {
    pub pool: Vec<FittedDetector>,
    pub ensemble: EnsembleModel,
    pub single: SingleModel,
}

impl Deployed {
    /// Higher validation fitness wins, then higher validation AUC-PR; a
    /// full tie goes to the ensemble, whose stacked score pools several
    /// detectors.
    pub fn designated(&self) -> Branch {
        let (e, s) = (&self.ensemble, &self.single);
        if (e.fitness, e.auc_pr) >= (s.fitness, s.auc_pr) {
            Branch::Ensemble
        } else {
            Branch::Single
        }
    }

    pub fn single_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        self.pool[self.single.index].scores(data)
    }

    pub fn ensemble_scores(&self, data: &TimeSeries) -> Result<Vec<f64>> {
        let cols = self
            .ensemble
            .subset
            .iter()
            .map(|&j| self.pool[j].scores(data))
            .collect::<Result<Vec<_>>>()?;
        let ids = self.ensemble.ids.clone();
        let m = crate::detectors::ScoreMatrix::from_columns(ids, &cols)?;
        let all: Vec<usize> = (0..m.cols()).collect();
        self.ensemble.meta.predict(&ga::features(&m, &all)?)
    }
}

/// Produces fresh models from a training buffer. `round` is 0 offline and
/// counts re-selections afterwards.
pub trait Reselect {
    fn reselect(&self, buffer: &TimeSeries, round: usize) -> Result<Deployed>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDecision {
    pub window: usize,
    /// Start offset within the online split.
    pub start: usize,
    pub single: Vec<u8>,
    pub ensemble: Vec<u8>,
    #[serde(rename = "final")]
    pub final_: Vec<u8>,
    pub designated: Branch,
    pub single_scores: Vec<f64>,
    pub ensemble_scores: Vec<f64>,
    /// Re-selection ran after this window.
    pub reoptimized: bool,
    /// Re-selection round whose models produced this decision.
    pub round: usize,
}

#[derive(Debug)]
pub struct OnlineState {
    buffer: TimeSeries,
    deployed: Deployed,
    spec: WindowSpec,
    cfg: OnlineConfig,
    counter: usize,
    round: usize,
    /// Novel samples since the last trigger, as a series.
    pending: Option<TimeSeries>,
    /// Samples observed so far in the online stream.
    seen: usize,
    /// Unlabeled recent rows ending at the last observed sample.
    history: TimeSeries,
}

pub fn init_online(
    deployed: Deployed,
    offline: &TimeSeries,
    online_len: usize,
    cfg: OnlineConfig,
) -> Result<OnlineState> {
    cfg.validate()?;
    let spec = window_sizing(online_len)?;
    let from = offline.len().saturating_sub(SCORING_CONTEXT);
    Ok(OnlineState {
        buffer: offline.clone(),
        deployed,
        spec,
        cfg,
        counter: 0,
        round: 0,
        pending: None,
        seen: 0,
        history: offline.slice(from, offline.len())?.without_labels(),
    })
}

impl OnlineState {
    pub fn buffer(&self) -> &TimeSeries {
        &self.buffer
    }

    pub fn deployed(&self) -> &Deployed {
        &self.deployed
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    pub fn rounds(&self) -> usize {
        self.round
    }

    /// Samples queued for the next buffer update.
    pub fn pending_len(&self) -> usize {
        self.pending.as_ref().map_or(0, TimeSeries::len)
    }

    /// Processes the next window, whose first row sits at
    /// `counter * step` in the online split.
    pub fn step(&mut self, window: &TimeSeries, reselect: &dyn Reselect) -> Result<WindowDecision> {
        if window.len() != self.spec.width {
            return Err(Error::DimensionMismatch {
                expected: self.spec.width,
                actual: window.len(),
            });
        }
        let start = self.counter * self.spec.stride;
        // history rows strictly before this window
        let before = self.history.len() - self.seen.saturating_sub(start).min(self.history.len());
        let from = before.saturating_sub(SCORING_CONTEXT);
        let (scored, skip) = if before > from {
            let ctx = self.history.slice(from, before)?;
            (ctx.concat(&window.without_labels())?, ctx.len())
        } else {
            (window.without_labels(), 0)
        };
        let (single_scores, ensemble_scores) = rayon::join(
            || self.deployed.single_scores(&scored),
            || self.deployed.ensemble_scores(&scored),
        );
        let single_scores = single_scores?[skip..].to_vec();
        let ensemble_scores = ensemble_scores?[skip..].to_vec();
        let single = binarize(&single_scores, self.deployed.single.threshold);
        let ensemble = binarize(&ensemble_scores, self.deployed.ensemble.threshold);
        let designated = self.deployed.designated();
        let final_ = match designated {
            Branch::Ensemble => ensemble.clone(),
            Branch::Single => single.clone(),
        };

        // rows of this window not covered by earlier ones
        let novel_from = self.seen.saturating_sub(start).min(window.len());
        if novel_from < window.len() {
            let novel = window.slice(novel_from, window.len())?;
            self.pending = Some(match self.pending.take() {
                Some(p) => p.concat(&novel)?,
                None => novel,
            });
            self.seen = start + window.len();
            let joined = self.history.concat(&window.slice(novel_from, window.len())?.without_labels())?;
            let keep = SCORING_CONTEXT + self.spec.width;
            let from = joined.len().saturating_sub(keep);
            self.history = joined.slice(from, joined.len())?;
        }

        let decided_round = self.round;
        self.counter += 1;
        let trigger = self.cfg.reopt && self.counter % self.cfg.period == 0;
        if trigger {
            self.reoptimize(reselect)?;
        }
        Ok(WindowDecision {
            window: self.counter - 1,
            start,
            single,
            ensemble,
            final_,
            designated,
            single_scores,
            ensemble_scores,
            reoptimized: trigger,
            round: decided_round,
        })
    }

    /// Slides the queued samples into the buffer, dropping as many from
    /// the head. The length never changes.
    pub fn assemble_reopt_buffer(&mut self) -> Result<()> {
        let Some(novel) = self.pending.take() else {
            return Ok(());
        };
        let n = self.buffer.len();
        if novel.len() >= n {
            return Err(Error::insufficient(format!(
                "{} new samples would displace the whole {n}-sample buffer",
                novel.len()
            )));
        }
        // unlabeled feedback counts as normal in a labeled buffer
        let novel = match (self.buffer.labels().is_some(), novel.labels().is_some()) {
            (true, false) => {
                let k = novel.len();
                novel.with_labels(Some(vec![0; k]))?
            }
            (false, true) => novel.without_labels(),
            _ => novel,
        };
        self.buffer = self.buffer.slice(novel.len(), n)?.concat(&novel)?;
        debug_assert_eq!(self.buffer.len(), n);
        Ok(())
    }

    pub fn reoptimize(&mut self, reselect: &dyn Reselect) -> Result<()> {
        self.assemble_reopt_buffer()?;
        self.round += 1;
        self.deployed = reselect.reselect(&self.buffer, self.round).map_err(|e| e.in_stage("reoptimize"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchF1 {
    pub single: f64,
    pub ensemble: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub windows: usize,
    pub reoptimizations: usize,
    /// Timesteps covered by the stitched predictions.
    pub covered: usize,
    /// `None` when the online split has no labels.
    pub f1: Option<BranchF1>,
}

/// Per-timestep predictions where each timestep takes the decision of the
/// window that first covered it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stitched {
    pub single: Vec<u8>,
    pub ensemble: Vec<u8>,
    pub final_: Vec<u8>,
}

impl Stitched {
    pub fn push(&mut self, d: &WindowDecision) {
        let from = self.final_.len().saturating_sub(d.start);
        for k in from..d.final_.len() {
            self.single.push(d.single[k]);
            self.ensemble.push(d.ensemble[k]);
            self.final_.push(d.final_[k]);
        }
    }

    pub fn len(&self) -> usize {
        self.final_.len()
    }

    pub fn is_empty(&self) -> bool {
        self.final_.is_empty()
    }

    /// Event F1 of each branch over `range` of the covered prefix.
    pub fn f1(&self, truth: &[u8], range: std::ops::Range<usize>) -> Result<BranchF1> {
        let end = range.end.min(self.len()).min(truth.len());
        let r = range.start.min(end)..end;
        let t = &truth[r.clone()];
        Ok(BranchF1 {
            single: event_f1(&self.single[r.clone()], t)?.f1,
            ensemble: event_f1(&self.ensemble[r.clone()], t)?.f1,
            final_: event_f1(&self.final_[r], t)?.f1,
        })
    }
}

/// Drives `state` over every window of `online`, calling `sink` per
/// decision. Labels on `online` feed the summary, and with `feedback` they
/// also travel with the windows into later training buffers.
pub fn run_stream(
    state: &mut OnlineState,
    online: &TimeSeries,
    reselect: &dyn Reselect,
    feedback: bool,
    mut sink: impl FnMut(&WindowDecision) -> Result<()>,
) -> Result<(StreamSummary, Stitched)> {
    let truth = online.labels().map(<[u8]>::to_vec);
    let source = if feedback { online.clone() } else { online.without_labels() };
    let spec = state.spec();
    let count = spec.count(online.len());
    let mut stitched = Stitched::default();
    let mut reopts = 0;
    for i in 0..count {
        let start = i * spec.stride;
        let window = source.slice(start, start + spec.width)?;
        let d = state.step(&window, reselect)?;
        reopts += usize::from(d.reoptimized);
        stitched.push(&d);
        sink(&d)?;
    }
    let f1 = match truth {
        Some(t) => Some(stitched.f1(&t, 0..stitched.len())?),
        None => None,
    };
    Ok((
        StreamSummary {
            windows: count,
            reoptimizations: reopts,
            covered: stitched.len(),
            f1,
        },
        stitched,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{fit_pool, DetectorConfig, DetectorSpec, PoolMember};
    use crate::meta::{MetaKind, TrainedMeta};
    use std::cell::Cell;

    fn series(n: usize, offset: f64) -> TimeSeries {
        let v = (0..n).map(|i| offset + (i as f64 * 0.3).sin()).collect();
        TimeSeries::univariate("s", v, None).unwrap()
    }

    #[derive(Debug, Default)]
    struct Fixed {
        calls: Cell<usize>,
    }

    impl Fixed {
        fn deploy(buffer: &TimeSeries) -> Deployed {
            let members: Vec<PoolMember> = vec![
                DetectorConfig {
                    id: "rm_0".into(),
                    spec: DetectorSpec::Rm { window: 5 },
                }
                .into(),
                DetectorConfig {
                    id: "md_0".into(),
                    spec: DetectorSpec::Md,
                }
                .into(),
            ];
            let pool = fit_pool(&members, buffer).unwrap();
            Deployed {
                pool,
                ensemble: EnsembleModel {
                    subset: vec![0, 1],
                    ids: vec!["rm_0".into(), "md_0".into()],
                    meta: TrainedMeta::linear(MetaKind::Lr, vec![1.0, 1.0], -1.0),
                    threshold: 0.5,
                    fitness: 0.4,
                    auc_pr: 0.4,
                },
                single: SingleModel {
                    index: 1,
                    id: "md_0".into(),
                    threshold: 0.8,
                    fitness: 0.6,
                    auc_pr: 0.6,
                },
            }
        }
    }

    impl Reselect for Fixed {
        fn reselect(&self, buffer: &TimeSeries, _round: usize) -> Result<Deployed> {
            self.calls.set(self.calls.get() + 1);
            Ok(Self::deploy(buffer))
        }
    }

    #[test]
    fn designation_order() {
        let mut d = Fixed::deploy(&series(200, 0.0));
        assert_eq!(d.designated(), Branch::Single);
        d.ensemble.fitness = 0.6;
        assert_eq!(d.designated(), Branch::Single);
        d.ensemble.auc_pr = 0.7;
        assert_eq!(d.designated(), Branch::Ensemble);
        d.ensemble.auc_pr = 0.6;
        assert_eq!(d.designated(), Branch::Ensemble);
        d.ensemble.fitness = 0.5;
        d.ensemble.auc_pr = 1.0;
        assert_eq!(d.designated(), Branch::Single);
    }

    #[test]
    fn sizing_examples() {
        let s = window_sizing(200).unwrap();
        assert_eq!((s.width, s.stride), (10, 1));
        let s = window_sizing(40).unwrap();
        assert_eq!((s.width, s.stride), (2, 1));
        assert_eq!(window_sizing(10).unwrap().width, 2);
        assert!(window_sizing(1).is_err());
        let s = window_sizing(1000).unwrap();
        assert_eq!((s.width, s.stride), (50, 3));
    }

    #[test]
    fn trigger_counts_and_constant_buffer() {
        let offline = series(300, 0.0);
        let online = series(23 + 9, 0.0);
        let sel = Fixed::default();
        let mut st = init_online(Fixed::deploy(&offline), &offline, 200, OnlineConfig::default()).unwrap();
        assert_eq!(st.spec().width, 10);
        let mut flags = vec![];
        let mut first_rows = vec![];
        for i in 0..23 {
            let d = st.step(&online.slice(i, i + 10).unwrap(), &sel).unwrap();
            flags.push(d.reoptimized);
            assert_eq!(st.buffer().len(), 300);
            first_rows.push(st.buffer().values()[0]);
        }
        let at: Vec<usize> = flags.iter().enumerate().filter(|f| *f.1).map(|f| f.0 + 1).collect();
        assert_eq!(at, vec![5, 10, 15, 20]);
        assert_eq!(sel.calls.get(), 4);
        // first round appends w + 4 steps, later rounds 5 steps each
        assert_eq!(st.buffer().values()[300 - 29..], online.values()[..29]);
        assert_eq!(st.pending_len(), 3);
    }

    #[test]
    fn reopt_off_keeps_models() {
        let offline = series(300, 0.0);
        let online = series(60, 5.0);
        let sel = Fixed::default();
        let cfg = OnlineConfig { period: 5, reopt: false };
        let mut st = init_online(Fixed::deploy(&offline), &offline, 200, cfg).unwrap();
        let mut a = vec![];
        for i in 0..20 {
            a.push(st.step(&online.slice(i, i + 10).unwrap(), &sel).unwrap());
        }
        assert_eq!(sel.calls.get(), 0);
        assert!(a.iter().all(|d| !d.reoptimized && d.round == 0));
        let mut again = init_online(Fixed::deploy(&offline), &offline, 200, cfg).unwrap();
        for (i, d) in a.iter().enumerate() {
            assert_eq!(&again.step(&online.slice(i, i + 10).unwrap(), &sel).unwrap(), d);
        }
    }

    #[test]
    fn decisions_follow_designated_branch() {
        let offline = series(300, 0.0);
        let online = series(40, 0.0);
        let sel = Fixed::default();
        let mut st = init_online(Fixed::deploy(&offline), &offline, 200, OnlineConfig::default()).unwrap();
        let d = st.step(&online.slice(0, 10).unwrap(), &sel).unwrap();
        assert_eq!(d.designated, Branch::Single);
        assert_eq!(d.final_, d.single);
        assert!(st.step(&online.slice(0, 9).unwrap(), &sel).is_err());
    }

    #[test]
    fn window_scores_match_contiguous_stream() {
        let offline = series(300, 0.0);
        let online = series(80, 0.5);
        let sel = Fixed::default();
        let mut dep = Fixed::deploy(&offline);
        dep.single.index = 0;
        let full = dep.pool[0].scores(&offline.concat(&online).unwrap()).unwrap();
        let mut st = init_online(dep, &offline, 200, OnlineConfig::default()).unwrap();
        for i in 0..30 {
            let d = st.step(&online.slice(i, i + 10).unwrap(), &sel).unwrap();
            if i < 4 {
                // before the first re-selection the models are the offline ones
                for (a, b) in d.single_scores.iter().zip(&full[300 + i..310 + i]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fifo_drop_order() {
        let offline = TimeSeries::univariate("o", (0..100).map(f64::from).collect(), None).unwrap();
        let online = TimeSeries::univariate("n", (100..200).map(f64::from).collect(), None).unwrap();
        let sel = Fixed::default();
        let cfg = OnlineConfig { period: 2, reopt: true };
        let mut st = init_online(Fixed::deploy(&offline), &offline, 40, cfg).unwrap();
        for i in 0..6 {
            st.step(&online.slice(i, i + 2).unwrap(), &sel).unwrap();
        }
        // 7 novel samples in three rounds
        let v = st.buffer().values();
        assert_eq!(v.len(), 100);
        assert_eq!(v[0], 7.0);
        assert_eq!(v[99], 106.0);
        assert!(v.windows(2).all(|w| w[1] == w[0] + 1.0));
    }

    #[test]
    fn stitching_uses_first_cover() {
        let mut s = Stitched::default();
        let mk = |start: usize, v: Vec<u8>| WindowDecision {
            window: 0,
            start,
            single: v.clone(),
            ensemble: v.clone(),
            final_: v,
            designated: Branch::Single,
            single_scores: vec![],
            ensemble_scores: vec![],
            reoptimized: false,
            round: 0,
        };
        s.push(&mk(0, vec![1, 0, 0]));
        s.push(&mk(1, vec![1, 1, 1]));
        s.push(&mk(2, vec![0, 0, 0]));
        assert_eq!(s.final_, vec![1, 0, 0, 1, 0]);
        let f = s.f1(&[1, 0, 0, 1, 0], 0..5).unwrap();
        assert_eq!(f.final_, 1.0);
    }
}
