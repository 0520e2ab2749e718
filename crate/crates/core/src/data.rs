//! Time-series ingestion, chronological splitting, window segmentation and
//! labeled synthetic series for tests and demos.

use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A `T x d` real matrix (row-major, one row per timestep) with optional
/// per-timestep binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    name: String,
    values: Vec<f64>,
    dims: usize,
    labels: Option<Vec<u8>>,
}

impl TimeSeries {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        dims: usize,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("series needs at least one feature"));
        }
        if values.is_empty() || values.len() % dims != 0 {
            return Err(Error::invalid(format!(
                "value buffer of length {} does not form rows of width {dims}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, feature {}",
                i / dims,
                i % dims
            )));
        }
        let len = values.len() / dims;
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    actual: l.len(),
                });
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        Ok(Self {
            name: name.into(),
            values,
            dims,
            labels,
        })
    }

    /// Builds a univariate series.
    pub fn univariate(name: impl Into<String>, values: Vec<f64>, labels: Option<Vec<u8>>) -> Result<Self> {
        Self::new(name, values, 1, labels)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dims)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Same values with labels removed.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    actual: l.len(),
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Rows `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "slice [{start}, {end}) outside series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            name: self.name.clone(),
            values: self.values[start * self.dims..end * self.dims].to_vec(),
            dims: self.dims,
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        })
    }

    /// Appends the rows of `other`. Labels survive only if both sides carry them.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dims != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: other.dims,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Self {
            name: self.name.clone(),
            values,
            dims: self.dims,
            labels,
        })
    }

    /// Per-timestep mean over features.
    pub fn channel_mean(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().sum::<f64>() / self.dims as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub width: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(width: usize, stride: usize) -> Result<Self> {
        if width == 0 || stride == 0 {
            return Err(Error::invalid("window width and stride must be positive"));
        }
        Ok(Self { width, stride })
    }

    /// Number of full windows over a series of length `len`.
    pub fn count(&self, len: usize) -> usize {
        if self.width > len {
            0
        } else {
            (len - self.width) / self.stride + 1
        }
    }
}

/// A borrowed view of `width` consecutive rows starting at `start`.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub index: usize,
    pub start: usize,
    pub width: usize,
    series: &'a TimeSeries,
}

impl<'a> Window<'a> {
    pub fn end(&self) -> usize {
        self.start + self.width
    }

    pub fn values(&self) -> &'a [f64] {
        let d = self.series.dims();
        &self.series.values()[self.start * d..self.end() * d]
    }

    pub fn labels(&self) -> Option<&'a [u8]> {
        self.series.labels().map(|l| &l[self.start..self.end()])
    }

    pub fn series(&self) -> &'a TimeSeries {
        self.series
    }

    pub fn to_series(&self) -> TimeSeries {
        self.series
            .slice(self.start, self.end())
            .expect("window lies inside its series")
    }
}

/// Splits a series into fixed-width windows. Trailing samples that do not fill
/// a complete window are dropped.
pub fn segment(series: &TimeSeries, spec: WindowSpec) -> Result<Vec<Window<'_>>> {
    if spec.width == 0 || spec.stride == 0 {
        return Err(Error::invalid("window width and stride must be positive"));
    }
    if spec.width > series.len() {
        return Err(Error::invalid(format!(
            "window width {} exceeds series length {}",
            spec.width,
            series.len()
        )));
    }
    Ok((0..spec.count(series.len()))
        .map(|i| Window {
            index: i,
            start: i * spec.stride,
            width: spec.width,
            series,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub offline_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { offline_fraction: 0.8 }
    }
}

/// Chronological split: the first `floor(fraction * T)` rows go offline.
pub fn split_offline_online(series: &TimeSeries, spec: SplitSpec) -> Result<(TimeSeries, TimeSeries)> {
    if !(spec.offline_fraction > 0.0 && spec.offline_fraction < 1.0) {
        return Err(Error::invalid("offline fraction must lie in (0, 1)"));
    }
    let len = series.len();
    let cut = (spec.offline_fraction * len as f64).floor() as usize;
    if cut == 0 || cut >= len {
        return Err(Error::insufficient(format!(
            "series of length {len} cannot be split into two nonempty parts"
        )));
    }
    Ok((series.slice(0, cut)?, series.slice(cut, len)?))
}

/// Reads a header-first CSV. Every column is a feature except a final column
/// named `label`, which must hold 0/1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, name)
}

pub fn read_csv<R: std::io::Read>(reader: R, name: impl Into<String>) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() {
        return Err(Error::Csv("missing header row".into()));
    }
    let has_label = headers.last().map(|h| h == "label").unwrap_or(false);
    let dims = headers.len() - usize::from(has_label);
    if dims == 0 {
        return Err(Error::Csv("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // 1-based data row numbering, header excluded
        let row = i + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Csv(format!(
                "ragged row {row}: expected {expected_len} fields, found {len}"
            )),
            _ => Error::Csv(e.to_string()),
        })?;
        for (j, cell) in record.iter().enumerate().take(dims) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].clone(),
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    value: cell.to_owned(),
                });
            }
            values.push(v);
        }
        if has_label {
            let cell = &record[dims];
            let label = match cell {
                "0" | "0.0" => 0,
                "1" | "1.0" => 1,
                _ => {
                    return Err(Error::Parse {
                        row,
                        column: "label".into(),
                        value: cell.to_owned(),
                    })
                }
            };
            labels.push(label);
        }
    }
    if values.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    TimeSeries::new(name, values, dims, has_label.then_some(labels))
}

/// Writes `f0..f{d-1}[,label]` CSV.
pub fn write_csv<W: std::io::Write>(series: &TimeSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..series.dims()).map(|j| format!("f{j}")).collect();
    if series.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
    for (t, row) in series.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = series.labels() {
            rec.push(l[t].to_string());
        }
        w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Point,
    Contextual,
    Collective,
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Self::Point),
            "contextual" => Ok(Self::Contextual),
            "collective" => Ok(Self::Collective),
            other => Err(Error::invalid(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

impl AnomalyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Point => "point",
            Self::Contextual => "contextual",
            Self::Collective => "collective",
        }
    }

    /// Labeled timesteps per injected event.
    fn event_len(&self, period: usize) -> usize {
        match self {
            Self::Point => 1,
            Self::Contextual => (period / 4).max(2),
            Self::Collective => (period / 2).max(4),
        }
    }
}

/// Parameters of the sinusoid-plus-noise generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub period: usize,
    pub amplitude: f64,
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            period: 40,
            amplitude: 1.0,
            noise: 0.1,
        }
    }
}

pub fn synth_generate(
    kind: AnomalyKind,
    length: usize,
    dims: usize,
    anomaly_count: usize,
    seed: u64,
) -> Result<TimeSeries> {
    synth_generate_with(kind, length, dims, anomaly_count, seed, SynthParams::default())
}

/// Sinusoid + Gaussian noise per feature with `anomaly_count` injected events.
///
/// Labels mark exactly the perturbed timesteps. Events never overlap and keep
/// a gap of one period between each other and from the series ends.
pub fn synth_generate_with(
    kind: AnomalyKind,
    length: usize,
    dims: usize,
    anomaly_count: usize,
    seed: u64,
    params: SynthParams,
) -> Result<TimeSeries> {
    if length < 100 {
        return Err(Error::invalid("synthetic series need length >= 100"));
    }
    if dims == 0 {
        return Err(Error::invalid("synthetic series need at least one feature"));
    }
    let period = params.period.max(4);
    let mut rng = seed::stage_rng(seed, "synth");
    let noise = Normal::new(0.0, params.noise.max(0.0)).expect("finite noise scale");

    let phases: Vec<f64> = (0..dims).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let base = |t: usize, j: usize, freq: f64| {
        params.amplitude * (std::f64::consts::TAU * freq * t as f64 / period as f64 + phases[j]).sin()
    };
    let mut values = Vec::with_capacity(length * dims);
    for t in 0..length {
        for j in 0..dims {
            values.push(base(t, j, 1.0) + noise.sample(&mut rng));
        }
    }
    let mut labels = vec![0u8; length];

    let event_len = kind.event_len(period);
    let starts = place_events(length, event_len, anomaly_count, period, &mut rng)?;
    let local_sd = (params.amplitude * params.amplitude / 2.0 + params.noise * params.noise).sqrt();
    for start in starts {
        match kind {
            AnomalyKind::Point => {
                let t = start;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mag = rng.random_range(6.0..8.0) * local_sd;
                for j in 0..dims {
                    values[t * dims + j] += sign * mag;
                }
            }
            AnomalyKind::Contextual => {
                // Mirror the clean signal: values stay inside the global range
                // but the phase is wrong.
                for t in start..start + event_len {
                    for j in 0..dims {
                        let clean = base(t, j, 1.0);
                        values[t * dims + j] = -clean + noise.sample(&mut rng);
                    }
                }
            }
            AnomalyKind::Collective => {
                let flat = rng.random_bool(0.5);
                for t in start..start + event_len {
                    for j in 0..dims {
                        values[t * dims + j] = if flat {
                            base(start, j, 1.0)
                        } else {
                            base(t, j, 3.0) + noise.sample(&mut rng)
                        };
                    }
                }
            }
        }
        for l in &mut labels[start..start + event_len] {
            *l = 1;
        }
    }
    TimeSeries::new(format!("synth-{}-{seed}", kind.as_str()), values, dims, Some(labels))
}

fn place_events(
    length: usize,
    event_len: usize,
    count: usize,
    gap: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    // Each event owns a slot of event_len + gap; the slack is spread randomly.
    let needed = count * (event_len + gap) + gap;
    if needed > length {
        return Err(Error::invalid(format!(
            "{count} events of length {event_len} do not fit in {length} samples"
        )));
    }
    let slack = length - needed;
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    Ok(cuts
        .iter()
        .enumerate()
        .map(|(i, &c)| gap + i * (event_len + gap) + c)
        .collect())
}
