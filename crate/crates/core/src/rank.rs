//! Markov-chain rank aggregation.
//!
//! Pairwise preference counts `C[i][j]` (how many rankings put `i` ahead of
//! `j`) are row-normalized into a transition matrix whose stationary
//! distribution, found by power iteration from the uniform vector, orders the
//! consensus.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector ids ordered best first, with optional per-id scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl Ranking {
    pub fn new(ids: Vec<String>) -> Self {
        Self { ids, scores: None }
    }

    pub fn with_scores(ids: Vec<String>, scores: Vec<f64>) -> Self {
        debug_assert_eq!(ids.len(), scores.len());
        Self {
            ids,
            scores: Some(scores),
        }
    }

    /// Orders `ids` by descending score; equal scores keep input order.
    pub fn from_scores(ids: &[String], scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self::with_scores(
            order.iter().map(|&i| ids[i].clone()).collect(),
            order.iter().map(|&i| scores[i]).collect(),
        )
    }

    pub fn top(&self) -> Option<&str> {
        self.ids.first().map(String::as_str)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate id `{id}` within a ranking")));
            }
        }
        Ok(())
    }
}

/// `counts[i][j]` = number of rankings placing `ids[i]` ahead of `ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    pub ids: Vec<String>,
    pub counts: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Normalizes the transposed counts so mass flows toward preferred ids.
    #[default]
    WinnerMass,
    /// Normalizes the counts exactly as written: mass flows from each id to
    /// the ids it beats.
    Literal,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "winner_mass" => Ok(Self::WinnerMass),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Config(format!("unknown rank orientation `{other}`"))),
        }
    }
}

impl Orientation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WinnerMass => "winner_mass",
            Self::Literal => "literal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub p: Vec<Vec<f64>>,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub v: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Counts ordered pairs across rankings. The id universe is the sorted union
/// of all ids; ids absent from a ranking add no pairs for it.
pub fn build_counts(rankings: &[Ranking]) -> Result<PreferenceMatrix> {
    if rankings.is_empty() {
        return Err(Error::invalid("aggregation needs at least one ranking"));
    }
    for r in rankings {
        r.check_unique()?;
    }
    let ids: Vec<String> = rankings
        .iter()
        .flat_map(|r| r.ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let n = ids.len();
    let mut counts = vec![vec![0u32; n]; n];
    for r in rankings {
        let pos: Vec<usize> = r.ids.iter().map(|id| index[id.as_str()]).collect();
        for (a, &i) in pos.iter().enumerate() {
            for &j in &pos[a + 1..] {
                counts[i][j] += 1;
            }
        }
    }
    Ok(PreferenceMatrix { ids, counts })
}

pub fn build_transition(c: &PreferenceMatrix, orientation: Orientation) -> TransitionMatrix {
    let n = c.ids.len();
    let weight = |i: usize, j: usize| -> f64 {
        match orientation {
            Orientation::Literal => c.counts[i][j] as f64,
            Orientation::WinnerMass => c.counts[j][i] as f64,
        }
    };
    let p = (0..n)
        .map(|i| {
            let total: f64 = (0..n).filter(|&l| l != i).map(|l| weight(i, l)).sum();
            if total > 0.0 {
                (0..n)
                    .map(|j| if j == i { 0.0 } else { weight(i, j) / total })
                    .collect()
            } else {
                vec![1.0 / n as f64; n]
            }
        })
        .collect();
    TransitionMatrix { p, orientation }
}

/// Power iteration `v <- v P` from the uniform vector until the l1 step is
/// below `tol`.
///
/// A periodic chain can oscillate forever under plain iteration; if that
/// happens the iteration is repeated on the lazy chain `(I + P) / 2`, which
/// has the same stationary distribution and is aperiodic.
pub fn stationary(p: &TransitionMatrix, tol: f64, max_iter: usize) -> Stationary {
    let plain = power_iterate(p, tol, max_iter, false);
    if plain.converged {
        return plain;
    }
    let lazy = power_iterate(p, tol, max_iter, true);
    Stationary {
        iterations: plain.iterations + lazy.iterations,
        ..lazy
    }
}

fn power_iterate(p: &TransitionMatrix, tol: f64, max_iter: usize, lazy: bool) -> Stationary {
    let n = p.p.len();
    if n == 0 {
        return Stationary {
            v: Vec::new(),
            iterations: 0,
            converged: true,
        };
    }
    let mut v = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        if lazy {
            next.iter_mut().zip(&v).for_each(|(x, &vi)| *x = 0.5 * vi);
        } else {
            next.iter_mut().for_each(|x| *x = 0.0);
        }
        let scale = if lazy { 0.5 } else { 1.0 };
        for (i, row) in p.p.iter().enumerate() {
            let vi = scale * v[i];
            if vi == 0.0 {
                continue;
            }
            for (x, &pij) in next.iter_mut().zip(row) {
                *x += vi * pij;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut v, &mut next);
        if delta < tol {
            return Stationary {
                v,
                iterations: it,
                converged: true,
            };
        }
    }
    Stationary {
        v,
        iterations: max_iter,
        converged: false,
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Result of an aggregation with its intermediate stationary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub ranking: Ranking,
    pub converged: bool,
}

pub fn aggregate(rankings: &[Ranking]) -> Result<Ranking> {
    aggregate_with(rankings, Orientation::WinnerMass).map(|c| c.ranking)
}

/// Counts, transition, stationary distribution, then sort by descending mass.
/// Ties fall back to mean input position, then id.
pub fn aggregate_with(rankings: &[Ranking], orientation: Orientation) -> Result<Consensus> {
    let c = build_counts(rankings)?;
    let p = build_transition(&c, orientation);
    let st = stationary(&p, DEFAULT_TOL, DEFAULT_MAX_ITER);

    let mut positions: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in rankings {
        for (pos, id) in r.ids.iter().enumerate() {
            let e = positions.entry(id.as_str()).or_insert((0.0, 0));
            e.0 += pos as f64;
            e.1 += 1;
        }
    }
    let mean_pos = |id: &str| {
        let (s, n) = positions[id];
        s / n as f64
    };

    // Masses equal up to iteration noise count as ties.
    let key: Vec<i64> = st.v.iter().map(|&x| (x * 1e10).round() as i64).collect();
    let mut order: Vec<usize> = (0..c.ids.len()).collect();
    order.sort_by(|&a, &b| {
        key[b]
            .cmp(&key[a])
            .then_with(|| mean_pos(&c.ids[a]).total_cmp(&mean_pos(&c.ids[b])))
            .then_with(|| c.ids[a].cmp(&c.ids[b]))
    });
    Ok(Consensus {
        ranking: Ranking::with_scores(
            order.iter().map(|&i| c.ids[i].clone()).collect(),
            order.iter().map(|&i| st.v[i]).collect(),
        ),
        converged: st.converged,
    })
}
