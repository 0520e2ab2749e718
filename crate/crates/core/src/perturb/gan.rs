//! Point-level GAN used to generate borderline candidates, plus the
//! ambiguity, selection and surrogate-label rules.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::seed;

use super::mlp::{bce, Activation, Dense, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub real_label: f64,
    pub fake_label: f64,
    pub input_noise: f64,
    pub tau: f64,
    /// Candidate pool size as a multiple of the injection count.
    pub candidate_factor: usize,
    pub rho: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 64,
            noise_dim: 32,
            hidden: 256,
            learning_rate: 1e-4,
            dropout: 0.4,
            real_label: 0.9,
            fake_label: 0.1,
            input_noise: 0.05,
            tau: 0.5,
            candidate_factor: 10,
            rho: 0.1,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gan: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch == 0 || self.noise_dim == 0 || self.hidden == 0 || self.candidate_factor == 0 {
            return bad("batch, noise_dim, hidden, candidate_factor must be >= 1");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("rho and tau must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.learning_rate > 0.0) || !(self.input_noise >= 0.0) {
            return bad("dropout in [0, 1), learning_rate > 0, input_noise >= 0 required");
        }
        Ok(())
    }
}

pub fn generator(noise_dim: usize, hidden: usize, d: usize, dropout: f64, rng: &mut impl Rng) -> Mlp {
    Mlp::new(vec![
        Dense::init(noise_dim, hidden, Activation::Relu, dropout, rng),
        Dense::init(hidden, d, Activation::Tanh, 0.0, rng),
    ])
    .expect("chained layers")
}

pub fn discriminator(d: usize, hidden: usize, dropout: f64, rng: &mut impl Rng) -> Mlp {
    Mlp::new(vec![
        Dense::init(d, hidden, Activation::Relu, dropout, rng),
        Dense::init(hidden, 1, Activation::Sigmoid, 0.0, rng),
    ])
    .expect("chained layers")
}

/// Per-feature affine map onto `[-1, 1]`; constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(series: &TimeSeries) -> Self {
        let d = series.dims();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in series.rows() {
            for j in 0..d {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        Self { min, max }
    }

    pub fn forward(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    2.0 * (v - self.min[j]) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| self.min[j] + (v + 1.0) / 2.0 * (self.max[j] - self.min[j]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Discriminator BCE on a held-out real batch and a fixed noise batch,
    /// hard targets, inference mode.
    pub heldout_d_bce: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub history: Vec<EpochLoss>,
    pub noise_dim: usize,
}

fn gaussian_block(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Trains on rows already scaled to `[-1, 1]` (row-major, `d` columns).
/// `heldout`, when given, is a block of real rows for the per-epoch
/// discriminator check.
pub fn train_gan(rows: &[f64], d: usize, cfg: &GanConfig, seed: u64, heldout: Option<&[f64]>) -> Result<TrainedGan> {
    cfg.validate()?;
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::invalid("GAN rows must be a whole number of d-wide rows"));
    }
    let n = rows.len() / d;
    if n < 2 * cfg.batch {
        return Err(Error::insufficient(format!(
            "GAN needs at least {} rows (2 x batch), got {n}",
            2 * cfg.batch
        )));
    }
    let mut init = seed::stage_rng(seed, "gan.init");
    let mut g = generator(cfg.noise_dim, cfg.hidden, d, cfg.dropout, &mut init);
    let mut dnet = discriminator(d, cfg.hidden, cfg.dropout, &mut init);
    let mut rng = seed::stage_rng(seed, "gan.train");
    let jitter = Normal::new(0.0, cfg.input_noise.max(f64::MIN_POSITIVE)).expect("valid std");

    let heldout_noise = heldout.map(|h| {
        let mut r = seed::stage_rng(seed, "gan.heldout");
        gaussian_block((h.len() / d) * cfg.noise_dim, &mut r)
    });

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        // Fisher-Yates with the training stream
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < cfg.batch {
                break;
            }
            let b = chunk.len();
            let noisy = |v: f64, rng: &mut _| {
                if cfg.input_noise > 0.0 {
                    v + jitter.sample(rng)
                } else {
                    v
                }
            };

            // discriminator step
            let mut real: Vec<f64> = chunk.iter().flat_map(|&i| rows[i * d..(i + 1) * d].iter().copied()).collect();
            for v in &mut real {
                *v = noisy(*v, &mut rng);
            }
            let z = gaussian_block(b * cfg.noise_dim, &mut rng);
            let (mut fake, _) = g.forward(&z, &mut rng)?;
            for v in &mut fake {
                *v = noisy(*v, &mut rng);
            }
            let (p_real, c_real) = dnet.forward(&real, &mut rng)?;
            let (l_real, g_real) = bce(&p_real, &vec![cfg.real_label; b]);
            let (p_fake, c_fake) = dnet.forward(&fake, &mut rng)?;
            let (l_fake, g_fake) = bce(&p_fake, &vec![cfg.fake_label; b]);
            let mut grads = dnet.backward(&c_real, &g_real)?;
            let gf = dnet.backward(&c_fake, &g_fake)?;
            for (a, b) in grads.flat.iter_mut().zip(&gf.flat) {
                *a = (*a + b) / 2.0;
            }
            dnet.adam_step(&grads, cfg.learning_rate);
            d_sum += (l_real + l_fake) / 2.0;

            // generator step, non-saturating target on fakes
            let z = gaussian_block(b * cfg.noise_dim, &mut rng);
            let (mut fake, c_g) = g.forward(&z, &mut rng)?;
            if cfg.input_noise > 0.0 {
                for v in &mut fake {
                    *v += jitter.sample(&mut rng);
                }
            }
            let (p, c_d) = dnet.forward(&fake, &mut rng)?;
            let (l_g, dp) = bce(&p, &vec![cfg.real_label; b]);
            let through_d = dnet.backward(&c_d, &dp)?;
            let g_grads = g.backward(&c_g, &through_d.input)?;
            g.adam_step(&g_grads, cfg.learning_rate);
            g_sum += l_g;
            steps += 1;
        }
        let heldout_d_bce = match (heldout, &heldout_noise) {
            (Some(h), Some(z)) => Some(discriminator_bce(&g, &dnet, h, z)?),
            _ => None,
        };
        history.push(EpochLoss {
            epoch,
            d_loss: d_sum / steps as f64,
            g_loss: g_sum / steps as f64,
            heldout_d_bce,
        });
    }
    Ok(TrainedGan {
        generator: g,
        discriminator: dnet,
        history,
        noise_dim: cfg.noise_dim,
    })
}

/// Mean of the real-side and fake-side BCE with hard targets (1 real, 0
/// fake), both networks in inference mode.
pub fn discriminator_bce(g: &Mlp, dnet: &Mlp, real: &[f64], noise: &[f64]) -> Result<f64> {
    let p_real = dnet.predict(real)?;
    let fake = g.predict(noise)?;
    let p_fake = dnet.predict(&fake)?;
    let (lr, _) = bce(&p_real, &vec![1.0; p_real.len()]);
    let (lf, _) = bce(&p_fake, &vec![0.0; p_fake.len()]);
    Ok((lr + lf) / 2.0)
}

impl TrainedGan {
    /// `k` candidate points in `[-1, 1]^d` from the generator in inference
    /// mode.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        let z = gaussian_block(k * self.noise_dim, rng);
        let out = self.generator.predict(&z)?;
        let d = self.generator.outputs();
        Ok(out.chunks(d).map(<[f64]>::to_vec).collect())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.discriminator.predict(x)?[0])
    }
}

pub fn ambiguity(d_of_x: f64, tau: f64) -> f64 {
    (d_of_x - tau).abs()
}

/// Indices of the `b` smallest ambiguities, ties by lower index, in
/// ascending index order.
pub fn select_borderline(delta: &[f64], b: usize) -> Result<Vec<usize>> {
    if b > delta.len() {
        return Err(Error::invalid(format!("cannot select {b} of {} candidates", delta.len())));
    }
    let mut idx: Vec<usize> = (0..delta.len()).collect();
    idx.sort_by(|&i, &j| delta[i].total_cmp(&delta[j]).then(i.cmp(&j)));
    let mut chosen = idx[..b].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn surrogate_label(d_of_x: f64, tau: f64) -> u8 {
    u8::from(d_of_x >= tau)
}

/// Borderline points in data units with their surrogate labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Borderline {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

/// Trains the GAN on the clean series, draws `candidate_factor * B`
/// candidates and keeps the `B = ceil(rho * T)` most ambiguous.
pub fn borderline_points(clean: &TimeSeries, cfg: &GanConfig, seed: u64) -> Result<(Borderline, Vec<EpochLoss>)> {
    let scaler = Scaler::fit(clean);
    let rows: Vec<f64> = clean.rows().flat_map(|r| scaler.forward(r)).collect();
    let gan = train_gan(&rows, clean.dims(), cfg, seed, None)?;
    let b = ((cfg.rho * clean.len() as f64).ceil() as usize).max(1);
    let mut rng = seed::stage_rng(seed, "gan.candidates");
    let candidates = gan.sample(cfg.candidate_factor * b, &mut rng)?;
    let scores: Vec<f64> = candidates.iter().map(|c| gan.score(c)).collect::<Result<_>>()?;
    let delta: Vec<f64> = scores.iter().map(|&s| ambiguity(s, cfg.tau)).collect();
    let chosen = select_borderline(&delta, b)?;
    let points = chosen.iter().map(|&i| scaler.inverse(&candidates[i])).collect();
    let labels = chosen.iter().map(|&i| surrogate_label(scores[i], cfg.tau)).collect();
    Ok((Borderline { points, labels }, gan.history))
}
