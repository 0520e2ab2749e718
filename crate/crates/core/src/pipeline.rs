//! End-to-end wiring: offline selection of both branches, the online
//! stream, and the JSON-lines records they emit.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{LabelMode, RunConfig};
use crate::data::{split_offline_online, TimeSeries};
use crate::detectors::{build_pool, fit_pool, timestep_matrix, FittedDetector, PoolMember};
use crate::error::{Error, Result};
use crate::ga::{run_ga, Evaluator, Folds, GenerationRecord};
use crate::lints::run_lints;
use crate::metrics::{auc_pr_or_zero, best_f1_threshold};
use crate::online::{
    init_online, run_stream, Branch, Deployed, EnsembleModel, Reselect, SingleModel, StreamSummary, WindowDecision,
};
use crate::perturb::{robustness_rankings, sba_augment, EpochLoss};
use crate::rank::{aggregate_with, Ranking};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub ids: Vec<String>,
    pub fitness: f64,
    pub f1: f64,
    pub auc_pr: f64,
    pub threshold: f64,
    pub evaluations: usize,
    pub history: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReport {
    pub id: String,
    pub fitness: f64,
    pub f1: f64,
    pub auc_pr: f64,
    pub threshold: f64,
}

/// Everything one selection round decided. Wall-clock durations live in
/// `durations` and are written as a separate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub series: String,
    pub seed: u64,
    pub round: usize,
    pub labels_mode: LabelMode,
    pub pool: Vec<String>,
    pub ensemble: EnsembleReport,
    pub single: SingleReport,
    pub lints: Ranking,
    pub gan: Ranking,
    pub sba: Ranking,
    pub mc: Ranking,
    pub robustness: Ranking,
    pub final_ranking: Ranking,
    pub designated: Branch,
    pub gan_history: Vec<EpochLoss>,
    pub config: BTreeMap<String, String>,
    #[serde(skip)]
    pub durations: BTreeMap<String, f64>,
}

impl SelectionReport {
    /// Same report with timings cleared, for comparing runs.
    pub fn without_durations(mut self) -> Self {
        self.durations.clear();
        self
    }

    /// The selection record followed by its timing record.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let rec = serde_json::json!({ "record": "selection", "selection": self });
        let timing = serde_json::json!({ "record": "timing", "round": self.round, "durations": self.durations });
        writeln!(w, "{rec}").map_err(io_err)?;
        writeln!(w, "{timing}").map_err(io_err)?;
        Ok(())
    }
}

fn io_err(source: std::io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source,
    }
}

/// Removes labels unless the run is allowed to read them. Every selection
/// stage receives its data through here.
pub fn label_guard(series: &TimeSeries, mode: LabelMode) -> TimeSeries {
    match mode {
        LabelMode::Synthetic => series.without_labels(),
        LabelMode::GroundTruth => series.clone(),
    }
}

fn ensure_redacted(series: &TimeSeries, mode: LabelMode, stage: &'static str) -> Result<()> {
    if mode == LabelMode::Synthetic && series.labels().is_some() {
        return Err(Error::invalid(format!("stage {stage} received ground-truth labels in synthetic mode")));
    }
    Ok(())
}

#[derive(Debug, Default)]
struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.0.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        out
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub deployed: Deployed,
    pub report: SelectionReport,
}

/// A configured pool plus the run settings; selects models from any buffer.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: RunConfig,
    members: Vec<PoolMember>,
}

impl Pipeline {
    /// Builds the configured pool for `dims` features.
    pub fn new(cfg: RunConfig, dims: usize) -> Result<Self> {
        cfg.validate()?;
        let members = build_pool(&cfg.pool, dims, seed::derive(cfg.seed, "pool"))?
            .into_iter()
            .map(PoolMember::from)
            .collect();
        Ok(Self { cfg, members })
    }

    /// Uses the given members instead of building a pool.
    pub fn with_members(cfg: RunConfig, members: Vec<PoolMember>) -> Result<Self> {
        cfg.validate()?;
        if members.is_empty() {
            return Err(Error::invalid("empty detector pool"));
        }
        Ok(Self { cfg, members })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn members(&self) -> &[PoolMember] {
        &self.members
    }

    fn round_seed(&self, round: usize) -> u64 {
        if round == 0 {
            self.cfg.seed
        } else {
            seed::derive_indexed(self.cfg.seed, "reopt", round as u64)
        }
    }

    /// Runs both branches on `series` (an offline split or training buffer).
    pub fn select(&self, series: &TimeSeries, round: usize) -> Result<Selection> {
        let cfg = &self.cfg;
        let mode = cfg.labels;
        let s = self.round_seed(round);
        let visible = label_guard(series, mode);
        ensure_redacted(&visible, mode, "select")?;
        let mut timer = Timer::default();

        let n = visible.len();
        let cut = n - (cfg.validation * n as f64).floor() as usize;
        if cut == 0 || cut >= n {
            return Err(Error::insufficient(format!("{n} samples cannot form train and validation folds")));
        }
        let pool: Vec<FittedDetector> = timer
            .time("fit", || fit_pool(&self.members, &visible.slice(0, cut)?))
            .map_err(|e| e.in_stage("fit"))?;

        // ensemble branch
        let labeled = match mode {
            LabelMode::Synthetic => {
                let mut rng = seed::stage_rng(s, "ga.sba");
                sba_augment(&visible, &cfg.robustness.sba, &mut rng)
                    .map_err(|e| e.in_stage("ga"))?
                    .series
            }
            LabelMode::GroundTruth => {
                if visible.labels().is_none() {
                    return Err(Error::invalid("labels.mode = ground_truth but the series has no labels").in_stage("ga"));
                }
                visible.clone()
            }
        };
        let labels = labeled.labels().expect("labeled above").to_vec();
        let folds = timestep_matrix(&pool, &labeled)
            .and_then(|m| Folds::chronological(&m, &labels, cfg.validation))
            .map_err(|e| e.in_stage("ga"))?;
        let ga = timer
            .time("ga", || run_ga(&cfg.ga, &folds, &cfg.meta, s))
            .map_err(|e| e.in_stage("ga"))?;
        let meta = Evaluator::new(&folds, cfg.meta, cfg.ga.sigma, s)
            .and_then(|ev| ev.train(&ga.best.subset))
            .map_err(|e| e.in_stage("ga"))?;

        // single branch
        let t0 = Instant::now();
        let (lints, robust) = rayon::join(
            || {
                let t = Instant::now();
                let out = run_lints(&cfg.lints, &cfg.robustness.sba, &pool, &visible, seed::derive(s, "lints"));
                (out, t.elapsed().as_secs_f64())
            },
            || {
                let t = Instant::now();
                let out = robustness_rankings(&pool, &visible, &cfg.robustness, seed::derive(s, "robust"));
                (out, t.elapsed().as_secs_f64())
            },
        );
        timer.0.insert("lints".into(), lints.1);
        timer.0.insert("robustness".into(), robust.1);
        timer.0.insert("single_branch".into(), t0.elapsed().as_secs_f64());
        let lints = lints.0.map_err(|e| e.in_stage("lints"))?;
        let robust = robust.0.map_err(|e| e.in_stage("robustness"))?;

        let (consensus, final_ranking) = timer
            .time("aggregate", || -> Result<_> {
                let c = aggregate_with(&[robust.gan.clone(), robust.sba.clone(), robust.mc.clone()], cfg.orientation)?;
                let f = aggregate_with(&[c.ranking.clone(), lints.ranking.clone()], cfg.orientation)?;
                Ok((c.ranking, f.ranking))
            })
            .map_err(|e| e.in_stage("aggregate"))?;

        let top = final_ranking.top().expect("nonempty pool");
        let index = pool.iter().position(|d| d.id() == top).expect("ranking covers the pool");
        let val_scores = folds.val.column(index);
        let (threshold, f1) = best_f1_threshold(&val_scores, &folds.val_labels).map_err(|e| e.in_stage("single"))?;
        let auc_pr = auc_pr_or_zero(&val_scores, &folds.val_labels);
        let single = SingleModel {
            index,
            id: top.to_string(),
            threshold,
            fitness: cfg.ga.sigma * f1 + (1.0 - cfg.ga.sigma) * auc_pr,
            auc_pr,
        };
        let ensemble = EnsembleModel {
            subset: ga.best.subset.clone(),
            ids: ga.best.ids.clone(),
            meta,
            threshold: ga.best.threshold,
            fitness: ga.best.fitness,
            auc_pr: ga.best.auc_pr,
        };
        let deployed = Deployed { pool, ensemble, single };

        let report = SelectionReport {
            series: series.name().to_string(),
            seed: s,
            round,
            labels_mode: mode,
            pool: self.members.iter().map(|m| m.id().to_string()).collect(),
            ensemble: EnsembleReport {
                ids: ga.best.ids.clone(),
                fitness: ga.best.fitness,
                f1: ga.best.f1,
                auc_pr: ga.best.auc_pr,
                threshold: ga.best.threshold,
                evaluations: ga.evaluations,
                history: ga.history,
            },
            single: SingleReport {
                id: deployed.single.id.clone(),
                fitness: deployed.single.fitness,
                f1,
                auc_pr,
                threshold,
            },
            lints: lints.ranking,
            gan: robust.gan,
            sba: robust.sba,
            mc: robust.mc,
            robustness: consensus,
            final_ranking,
            designated: deployed.designated(),
            gan_history: robust.gan_history,
            config: cfg.entries(),
            durations: timer.0,
        };
        Ok(Selection { deployed, report })
    }
}

impl Reselect for Pipeline {
    fn reselect(&self, buffer: &TimeSeries, round: usize) -> Result<Deployed> {
        self.select(buffer, round).map(|s| s.deployed)
    }
}

/// Offline selection on the offline split of `series`.
pub fn run_offline(series: &TimeSeries, cfg: &RunConfig) -> Result<Selection> {
    let (offline, _) = split_offline_online(series, cfg.split)?;
    Pipeline::new(cfg.clone(), series.dims())?.select(&offline, 0)
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub offline: SelectionReport,
    pub summary: StreamSummary,
    pub stitched: crate::online::Stitched,
}

/// Offline selection followed by the online loop over the online split.
/// Online labels reach the stream only as summary truth, plus as window
/// feedback in ground-truth mode.
pub fn run_online(
    series: &TimeSeries,
    cfg: &RunConfig,
    sink: impl FnMut(&WindowDecision) -> Result<()>,
) -> Result<StreamRun> {
    let pipeline = Pipeline::new(cfg.clone(), series.dims())?;
    run_online_with(&pipeline, series, sink)
}

pub fn run_online_with(
    pipeline: &Pipeline,
    series: &TimeSeries,
    sink: impl FnMut(&WindowDecision) -> Result<()>,
) -> Result<StreamRun> {
    let cfg = pipeline.config();
    let (offline, online) = split_offline_online(series, cfg.split)?;
    let selection = pipeline.select(&offline, 0)?;
    let buffer = label_guard(&offline, cfg.labels);
    let mut state = init_online(selection.deployed, &buffer, online.len(), cfg.online)?;
    let feedback = cfg.labels == LabelMode::GroundTruth;
    let (summary, stitched) = run_stream(&mut state, &online, pipeline, feedback, sink)?;
    Ok(StreamRun {
        offline: selection.report,
        summary,
        stitched,
    })
}

/// JSON line for one window decision.
pub fn decision_record(d: &WindowDecision) -> serde_json::Value {
    serde_json::json!({
        "record": "window",
        "window": d.window,
        "start": d.start,
        "designated": d.designated,
        "single": d.single,
        "ensemble": d.ensemble,
        "final": d.final_,
        "single_scores": d.single_scores,
        "ensemble_scores": d.ensemble_scores,
        "reoptimized": d.reoptimized,
        "round": d.round,
    })
}

pub fn summary_record(s: &StreamSummary) -> serde_json::Value {
    serde_json::json!({ "record": "summary", "summary": s, "f1_available": s.f1.is_some() })
}
