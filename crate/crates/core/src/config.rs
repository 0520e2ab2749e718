//! Run configuration as flat dotted `key = value` text.
//!
//! ```text
//! # comment
//! pool.knn.count = 2
//! pool.knn.k = 10
//! ga.population = 20
//! labels.mode = synthetic
//! ```
//!
//! Any `pool.*` key replaces the default pool (one detector per family).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::detectors::{Family, FamilyRequest, PoolRequest};
use crate::error::{Error, Result};
use crate::ga::GaConfig;
use crate::lints::LinTsConfig;
use crate::meta::MetaConfig;
use crate::online::OnlineConfig;
use crate::perturb::RobustnessConfig;
use crate::rank::Orientation;

pub const SEED_ENV: &str = "RAMSES_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Selection sees only pseudo-labels from injected copies.
    #[default]
    Synthetic,
    /// Selection may read the series' labels.
    GroundTruth,
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "ground_truth" => Ok(Self::GroundTruth),
            _ => Err(Error::Config(format!("labels.mode must be synthetic or ground_truth, got `{s}`"))),
        }
    }
}

impl LabelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Synthetic => "synthetic",
            Self::GroundTruth => "ground_truth",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub split: SplitSpec,
    pub pool: PoolRequest,
    pub ga: GaConfig,
    /// Trailing fraction of the offline split used as the GA validation fold.
    pub validation: f64,
    pub meta: MetaConfig,
    pub lints: LinTsConfig,
    pub robustness: RobustnessConfig,
    pub orientation: Orientation,
    pub online: OnlineConfig,
    pub labels: LabelMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: SplitSpec::default(),
            pool: default_pool(),
            ga: GaConfig::default(),
            validation: 0.25,
            meta: MetaConfig::default(),
            lints: LinTsConfig::default(),
            robustness: RobustnessConfig::default(),
            orientation: Orientation::default(),
            online: OnlineConfig::default(),
            labels: LabelMode::default(),
        }
    }
}

/// One instance of every family.
pub fn default_pool() -> PoolRequest {
    Family::ALL
        .iter()
        .map(|&f| {
            (
                f,
                FamilyRequest {
                    count: 1,
                    fixed: BTreeMap::new(),
                },
            )
        })
        .collect()
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn on_off(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` must be on or off, got `{value}`"))),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` override as given to `--set`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim().into(), v.trim().into())),
        _ => Err(Error::Config(format!("override `{s}` is not key=value"))),
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_all(&parse_pairs(&text)?)?;
        Ok(cfg)
    }

    /// Applies pairs in order. The first `pool.*` key clears the default pool.
    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut pool_touched = false;
        for (k, v) in pairs {
            if k.starts_with("pool.") && !pool_touched {
                self.pool.clear();
                pool_touched = true;
            }
            self.apply(k, v)?;
        }
        self.validate()
    }

    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "seed" => self.seed = num(k, v)?,
            "split.offline_fraction" => self.split.offline_fraction = num(k, v)?,

            "ga.population" => self.ga.population = num(k, v)?,
            "ga.generations" => self.ga.generations = num(k, v)?,
            "ga.mutation_rate" => self.ga.mutation_rate = num(k, v)?,
            "ga.elite" => self.ga.elite = Some(num(k, v)?),
            "ga.parents" => self.ga.parents = num(k, v)?,
            "ga.sigma" => self.ga.sigma = num(k, v)?,
            "ga.validation" => self.validation = num(k, v)?,

            "meta.kind" => self.meta.kind = v.parse()?,
            "meta.lr.learning_rate" => self.meta.lr.learning_rate = num(k, v)?,
            "meta.lr.epochs" => self.meta.lr.epochs = num(k, v)?,
            "meta.lr.l2" => self.meta.lr.l2 = num(k, v)?,
            "meta.svm.learning_rate" => self.meta.svm.learning_rate = num(k, v)?,
            "meta.svm.epochs" => self.meta.svm.epochs = num(k, v)?,
            "meta.svm.l2" => self.meta.svm.l2 = num(k, v)?,
            "meta.rf.trees" => self.meta.rf.trees = num(k, v)?,
            "meta.rf.max_depth" => self.meta.rf.max_depth = num(k, v)?,
            "meta.rf.min_leaf" => self.meta.rf.min_leaf = num(k, v)?,

            "lints.epsilon0" => self.lints.epsilon0 = num(k, v)?,
            "lints.decay_mode" => self.lints.decay_mode = v.parse()?,
            "lints.decay" => self.lints.decay = num(k, v)?,
            "lints.kappa" => self.lints.kappa = num(k, v)?,
            "lints.alpha" => self.lints.alpha = num(k, v)?,
            "lints.windows" => self.lints.windows = num(k, v)?,
            "lints.lambda" => self.lints.lambda = num(k, v)?,
            "lints.buffer" => self.lints.buffer = num(k, v)?,
            "lints.smoothing" => {
                self.lints.smoothing = if v == "off" { None } else { Some(num(k, v)?) }
            }

            "gan.epochs" => self.robustness.gan.epochs = num(k, v)?,
            "gan.batch" => self.robustness.gan.batch = num(k, v)?,
            "gan.noise_dim" => self.robustness.gan.noise_dim = num(k, v)?,
            "gan.hidden" => self.robustness.gan.hidden = num(k, v)?,
            "gan.learning_rate" => self.robustness.gan.learning_rate = num(k, v)?,
            "gan.dropout" => self.robustness.gan.dropout = num(k, v)?,
            "gan.real_label" => self.robustness.gan.real_label = num(k, v)?,
            "gan.fake_label" => self.robustness.gan.fake_label = num(k, v)?,
            "gan.input_noise" => self.robustness.gan.input_noise = num(k, v)?,
            "gan.tau" => self.robustness.gan.tau = num(k, v)?,
            "gan.candidate_factor" => self.robustness.gan.candidate_factor = num(k, v)?,
            "gan.rho" => self.robustness.gan.rho = num(k, v)?,

            "sba.fraction" => self.robustness.sba.fraction = num(k, v)?,
            "sba.gamma_min" => self.robustness.sba.gamma_min = num(k, v)?,
            "sba.gamma_max" => self.robustness.sba.gamma_max = num(k, v)?,
            "sba.context" => self.robustness.sba.context = num(k, v)?,

            "mc.trials" => self.robustness.mc.trials = num(k, v)?,
            "mc.noise" => self.robustness.mc.noise = num(k, v)?,
            "mc.magnitude_min" => self.robustness.mc.magnitude_min = num(k, v)?,
            "mc.magnitude_max" => self.robustness.mc.magnitude_max = num(k, v)?,
            "mc.anomalies" => self.robustness.mc.anomalies = num(k, v)?,
            "mc.context" => self.robustness.mc.context = num(k, v)?,

            "rank.orientation" => self.orientation = v.parse()?,
            "online.period" => self.online.period = num(k, v)?,
            "online.reopt" => self.online.reopt = on_off(k, v)?,
            "labels.mode" => self.labels = v.parse()?,

            _ if key.starts_with("pool.") => self.apply_pool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn apply_pool(&mut self, key: &str, v: &str) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let [_, family, param] = parts[..] else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        };
        let family: Family = family
            .parse()
            .map_err(|_| Error::Config(format!("unknown detector family in `{key}`")))?;
        let entry = self.pool.entry(family).or_insert(FamilyRequest {
            count: 1,
            fixed: BTreeMap::new(),
        });
        if param == "count" {
            entry.count = num(key, v)?;
        } else if family.param_names().contains(&param) {
            entry.fixed.insert(param.to_string(), num(key, v)?);
        } else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let frac = self.split.offline_fraction;
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::Config("split.offline_fraction must lie in (0, 1)".into()));
        }
        if !(self.validation > 0.0 && self.validation < 1.0) {
            return Err(Error::Config("ga.validation must lie in (0, 1)".into()));
        }
        if self.pool.values().map(|r| r.count).sum::<usize>() == 0 {
            return Err(Error::Config("the detector pool is empty".into()));
        }
        self.ga.validate()?;
        self.meta.validate()?;
        self.lints.validate()?;
        self.robustness.gan.validate()?;
        self.robustness.sba.validate()?;
        self.robustness.mc.validate()?;
        self.online.validate()
    }

    /// Every key with its current value; applying these to a default
    /// config reproduces `self`.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("split.offline_fraction", self.split.offline_fraction.to_string());
        for (family, req) in &self.pool {
            put(&format!("pool.{family}.count"), req.count.to_string());
            for (p, v) in &req.fixed {
                put(&format!("pool.{family}.{p}"), v.to_string());
            }
        }
        let ga = &self.ga;
        put("ga.population", ga.population.to_string());
        put("ga.generations", ga.generations.to_string());
        put("ga.mutation_rate", ga.mutation_rate.to_string());
        if let Some(k) = ga.elite {
            put("ga.elite", k.to_string());
        }
        put("ga.parents", ga.parents.to_string());
        put("ga.sigma", ga.sigma.to_string());
        put("ga.validation", self.validation.to_string());
        let meta = &self.meta;
        put("meta.kind", meta.kind.as_str().to_string());
        for (name, p) in [("lr", &meta.lr), ("svm", &meta.svm)] {
            put(&format!("meta.{name}.learning_rate"), p.learning_rate.to_string());
            put(&format!("meta.{name}.epochs"), p.epochs.to_string());
            put(&format!("meta.{name}.l2"), p.l2.to_string());
        }
        put("meta.rf.trees", meta.rf.trees.to_string());
        put("meta.rf.max_depth", meta.rf.max_depth.to_string());
        put("meta.rf.min_leaf", meta.rf.min_leaf.to_string());
        let l = &self.lints;
        put("lints.epsilon0", l.epsilon0.to_string());
        put("lints.decay_mode", l.decay_mode.as_str().to_string());
        put("lints.decay", l.decay.to_string());
        put("lints.kappa", l.kappa.to_string());
        put("lints.alpha", l.alpha.to_string());
        put("lints.windows", l.windows.to_string());
        put("lints.lambda", l.lambda.to_string());
        put("lints.buffer", l.buffer.to_string());
        put("lints.smoothing", l.smoothing.map_or("off".into(), |s| s.to_string()));
        let g = &self.robustness.gan;
        put("gan.epochs", g.epochs.to_string());
        put("gan.batch", g.batch.to_string());
        put("gan.noise_dim", g.noise_dim.to_string());
        put("gan.hidden", g.hidden.to_string());
        put("gan.learning_rate", g.learning_rate.to_string());
        put("gan.dropout", g.dropout.to_string());
        put("gan.real_label", g.real_label.to_string());
        put("gan.fake_label", g.fake_label.to_string());
        put("gan.input_noise", g.input_noise.to_string());
        put("gan.tau", g.tau.to_string());
        put("gan.candidate_factor", g.candidate_factor.to_string());
        put("gan.rho", g.rho.to_string());
        let s = &self.robustness.sba;
        put("sba.fraction", s.fraction.to_string());
        put("sba.gamma_min", s.gamma_min.to_string());
        put("sba.gamma_max", s.gamma_max.to_string());
        put("sba.context", s.context.to_string());
        let mc = &self.robustness.mc;
        put("mc.trials", mc.trials.to_string());
        put("mc.noise", mc.noise.to_string());
        put("mc.magnitude_min", mc.magnitude_min.to_string());
        put("mc.magnitude_max", mc.magnitude_max.to_string());
        put("mc.anomalies", mc.anomalies.to_string());
        put("mc.context", mc.context.to_string());
        put("rank.orientation", self.orientation.as_str().to_string());
        put("online.period", self.online.period.to_string());
        put("online.reopt", if self.online.reopt { "on" } else { "off" }.to_string());
        put("labels.mode", self.labels.as_str().to_string());
        m
    }
}

/// Seed from `RAMSES_SEED`, if set and numeric.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} is not an integer: `{s}`"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::MetaKind;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_pairs(text).unwrap()
    }

    #[test]
    fn defaults_match_table() {
        let c = RunConfig::default();
        assert_eq!(c.ga.population, 20);
        assert_eq!(c.ga.mutation_rate, 0.1);
        assert_eq!(c.meta.kind, MetaKind::Rf);
        assert_eq!(c.lints.epsilon0, 0.2);
        assert_eq!(c.lints.alpha, 0.7);
        assert_eq!(c.robustness.gan.epochs, 100);
        assert_eq!(c.robustness.mc.trials, 10);
        assert_eq!(c.online.period, 5);
        assert_eq!(c.labels, LabelMode::Synthetic);
        assert_eq!(c.pool.len(), 8);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parses_file_text() {
        let mut c = RunConfig::default();
        let text = "# pool\npool.knn.count = 2\npool.knn.k = 7 # fixed\n\nga.sigma=0.5\nonline.reopt = off\nmeta.kind = lr\n";
        c.apply_all(&pairs(text)).unwrap();
        assert_eq!(c.pool.len(), 1);
        assert_eq!(c.pool[&Family::Knn].count, 2);
        assert_eq!(c.pool[&Family::Knn].fixed["k"], 7);
        assert_eq!(c.ga.sigma, 0.5);
        assert!(!c.online.reopt);
        assert_eq!(c.meta.kind, MetaKind::Lr);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let mut c = RunConfig::default();
        for bad in [
            "ga.populaton = 3",
            "pool.knn.bins = 3",
            "pool.nope.count = 1",
            "online.reopt = maybe",
            "ga.mutation_rate = 2",
            "labels.mode = oracle",
            "seed = -1",
        ] {
            assert!(c.apply_all(&pairs(bad)).is_err(), "{bad}");
        }
        assert!(parse_pairs("no equals sign").is_err());
        assert!(parse_override("ga.sigma").is_err());
        assert_eq!(parse_override("a.b = 1").unwrap(), ("a.b".into(), "1".into()));
    }

    #[test]
    fn entries_round_trip() {
        let mut c = RunConfig::default();
        c.apply_all(&pairs("pool.rm.window = 9\nlints.smoothing = 0.3\nrank.orientation = literal\nseed = 42"))
            .unwrap();
        let echoed: Vec<(String, String)> = c.entries().into_iter().collect();
        let mut again = RunConfig::default();
        again.apply_all(&echoed).unwrap();
        assert_eq!(again, c);
    }
}
