//! Price paths: CSV ingestion and emission, seeded GBM generation, analytic
//! paths, and the weighted geometric price-index series.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::state::{default_labels, price_index, AssetWeights, PriceVector};

/// Generator family, crate versions and draw order used by [`generate`]. Paths
/// are bit-reproducible for a fixed value of this string.
pub const GENERATOR_ID: &str =
    "ChaCha20Rng (rand_chacha 0.9.0) seed_from_u64; StandardNormal (rand_distr 0.5.1); draws step-major, asset-minor";

#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    times: Vec<f64>,
    prices: Vec<PriceVector>,
    labels: Vec<String>,
}

impl PricePath {
    pub fn new(times: Vec<f64>, prices: Vec<PriceVector>, labels: Vec<String>) -> Result<Self> {
        if times.len() != prices.len() {
            return Err(Error::InvalidPath(format!(
                "{} times but {} price rows",
                times.len(),
                prices.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidPath(format!(
                "need at least 2 time points, got {}",
                times.len()
            )));
        }
        if let Some(k) = prices.iter().position(|p| p.len() != labels.len()) {
            return Err(Error::InvalidPath(format!(
                "row {k} has {} prices for {} labels",
                prices[k].len(),
                labels.len()
            )));
        }
        if let Some(k) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidPath(format!("time {k} is not finite")));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPath(format!(
                "times not strictly increasing at index {}",
                k + 1
            )));
        }
        Ok(Self {
            times,
            prices,
            labels,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn prices(&self) -> &[PriceVector] {
        &self.prices
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_assets(&self) -> usize {
        self.labels.len()
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// SHA-256 of the canonical CSV encoding, hex.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        write_csv(self, &mut buf).expect("writing to a Vec cannot fail");
        hex_digest(&buf)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    /// Drift per tick.
    pub mu: Vec<f64>,
    /// Volatility per square-root tick.
    pub sigma: Vec<f64>,
    /// Row-major correlation matrix; independent assets when absent.
    pub correlation: Option<Vec<Vec<f64>>>,
    pub steps: usize,
    pub initial: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeterministicKind {
    /// `p_i(t) = exp(rate_i * t / steps)`.
    ExpRamp { rates: Vec<f64> },
    /// `p_i(t) = exp(a_i * sin(2π t / period + 2π i / n))`.
    Sinusoid { amplitudes: Vec<f64>, period: f64 },
    /// Two assets, `p_0(t) = exp(t / steps)` and `p_1(t) = exp(-t / steps)`.
    ReciprocalPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicSpec {
    #[serde(flatten)]
    pub kind: DeterministicKind,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum PathSpec {
    Gbm(GbmSpec),
    Deterministic(DeterministicSpec),
    CsvFile { path: PathBuf },
}

pub fn generate(spec: &PathSpec) -> Result<PricePath> {
    match spec {
        PathSpec::Gbm(g) => generate_gbm(g),
        PathSpec::Deterministic(d) => generate_deterministic(d),
        PathSpec::CsvFile { path } => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            load_csv(file)
        }
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        Err(Error::InvalidSpec("steps must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn tick_times(steps: usize, dt: f64) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 * dt).collect()
}

fn generate_gbm(spec: &GbmSpec) -> Result<PricePath> {
    check_steps(spec.steps)?;
    let n = spec.initial.len();
    if n == 0 {
        return Err(Error::InvalidSpec("no assets".into()));
    }
    for (name, v) in [("mu", &spec.mu), ("sigma", &spec.sigma)] {
        if v.len() != n {
            return Err(Error::InvalidSpec(format!(
                "{name} has {} entries for {n} assets",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!("{name} must be finite")));
        }
    }
    if spec.sigma.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidSpec("sigma must be non-negative".into()));
    }
    if !(spec.dt.is_finite() && spec.dt > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "dt must be positive, got {}",
            spec.dt
        )));
    }
    let initial = PriceVector::new(spec.initial.clone())
        .map_err(|e| Error::InvalidSpec(format!("initial prices: {e}")))?;
    let labels = match &spec.labels {
        Some(l) if l.len() == n => l.clone(),
        Some(l) => {
            return Err(Error::InvalidSpec(format!(
                "{} labels for {n} assets",
                l.len()
            )))
        }
        None => default_labels(n),
    };
    let factor = match &spec.correlation {
        Some(c) => Some(cholesky_psd(c, n)?),
        None => None,
    };

    let drift: Vec<f64> = (0..n)
        .map(|i| (spec.mu[i] - 0.5 * spec.sigma[i] * spec.sigma[i]) * spec.dt)
        .collect();
    let vol: Vec<f64> = spec.sigma.iter().map(|s| s * spec.dt.sqrt()).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut prices = Vec::with_capacity(spec.steps + 1);
    let mut current = initial.as_slice().to_vec();
    prices.push(initial);
    let mut eps = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..spec.steps {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        match &factor {
            Some(l) => {
                for i in 0..n {
                    z[i] = (0..=i).map(|k| l[i][k] * eps[k]).sum();
                }
            }
            None => z.copy_from_slice(&eps),
        }
        for i in 0..n {
            current[i] *= (drift[i] + vol[i] * z[i]).exp();
        }
        prices.push(
            PriceVector::new(current.clone())
                .map_err(|e| Error::InvalidSpec(format!("price left range: {e}")))?,
        );
    }
    PricePath::new(tick_times(spec.steps, spec.dt), prices, labels)
}

/// Lower-triangular `L` with `L Lᵀ = c`. Accepts semidefinite input (zero
/// pivots with a vanishing column); anything else is an input error.
#[allow(clippy::needless_range_loop)]
fn cholesky_psd(c: &[Vec<f64>], n: usize) -> Result<Vec<Vec<f64>>> {
    const TOL: f64 = 1e-10;
    if c.len() != n || c.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidSpec(format!(
            "correlation matrix must be {n}x{n}"
        )));
    }
    for i in 0..n {
        if (c[i][i] - 1.0).abs() > TOL {
            return Err(Error::InvalidSpec(format!(
                "correlation diagonal entry {i} is {}, expected 1",
                c[i][i]
            )));
        }
        for j in 0..i {
            if !c[i][j].is_finite() || (c[i][j] - c[j][i]).abs() > TOL {
                return Err(Error::InvalidSpec(format!(
                    "correlation matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = c[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -TOL {
            return Err(Error::InvalidSpec(
                "correlation matrix is not positive semidefinite".into(),
            ));
        }
        if d <= TOL {
            for i in (j + 1)..n {
                let r = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if r.abs() > 1e-8 {
                    return Err(Error::InvalidSpec(
                        "correlation matrix is not positive semidefinite".into(),
                    ));
                }
            }
            continue;
        }
        let pivot = d.sqrt();
        l[j][j] = pivot;
        for i in (j + 1)..n {
            let r = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = r / pivot;
        }
    }
    Ok(l)
}

fn generate_deterministic(spec: &DeterministicSpec) -> Result<PricePath> {
    check_steps(spec.steps)?;
    let steps = spec.steps as f64;
    let rows: Vec<Vec<f64>> = match &spec.kind {
        DeterministicKind::ReciprocalPair => (0..=spec.steps)
            .map(|t| {
                let x = t as f64 / steps;
                vec![x.exp(), (-x).exp()]
            })
            .collect(),
        DeterministicKind::ExpRamp { rates } => {
            if rates.is_empty() || rates.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidSpec("exp-ramp needs finite rates".into()));
            }
            (0..=spec.steps)
                .map(|t| rates.iter().map(|r| (r * t as f64 / steps).exp()).collect())
                .collect()
        }
        DeterministicKind::Sinusoid { amplitudes, period } => {
            if amplitudes.is_empty() || amplitudes.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidSpec(
                    "sinusoid needs finite amplitudes".into(),
                ));
            }
            if !(period.is_finite() && *period > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "period must be positive, got {period}"
                )));
            }
            let n = amplitudes.len() as f64;
            (0..=spec.steps)
                .map(|t| {
                    amplitudes
                        .iter()
                        .enumerate()
                        .map(|(i, a)| {
                            (a * (2.0 * PI * t as f64 / period + 2.0 * PI * i as f64 / n).sin())
                                .exp()
                        })
                        .collect()
                })
                .collect()
        }
    };
    let n = rows[0].len();
    let prices = rows
        .into_iter()
        .map(PriceVector::new)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::InvalidSpec(format!("price left range: {e}")))?;
    PricePath::new(tick_times(spec.steps, 1.0), prices, default_labels(n))
}

fn parse_cell(raw: &str, row: u64, column: &str) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| Error::Csv {
        row,
        message: format!("column {column}: not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Csv {
            row,
            message: format!("column {column}: not finite: {raw:?}"),
        });
    }
    Ok(v)
}

/// Reads `time,<label0>,<label1>,...` CSV. Rows are numbered by line, with the
/// header on row 1.
pub fn load_csv<R: Read>(source: R) -> Result<PricePath> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();

    let csv_err = |e: csv::Error| {
        let row = e.position().map(|p| p.line()).unwrap_or(0);
        Error::Csv {
            row,
            message: e.to_string(),
        }
    };

    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => {
            return Err(Error::Csv {
                row: 1,
                message: "empty file".into(),
            })
        }
    };
    let mut cells = header.iter();
    let first = cells.next().unwrap_or("").trim_start_matches('\u{feff}');
    if first != "time" {
        return Err(Error::Csv {
            row: 1,
            message: format!("first header column must be \"time\", got {first:?}"),
        });
    }
    let labels: Vec<String> = cells.map(str::to_owned).collect();
    if labels.is_empty() {
        return Err(Error::Csv {
            row: 1,
            message: "no asset columns".into(),
        });
    }

    let mut times = Vec::new();
    let mut prices = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for record in records {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != labels.len() + 1 {
            return Err(Error::Csv {
                row,
                message: format!(
                    "expected {} fields, found {}",
                    labels.len() + 1,
                    record.len()
                ),
            });
        }
        let t = parse_cell(&record[0], row, "time")?;
        if t <= last_time {
            return Err(Error::Csv {
                row,
                message: format!("time {t} does not increase (previous {last_time})"),
            });
        }
        last_time = t;
        let mut p = Vec::with_capacity(labels.len());
        for (label, raw) in labels.iter().zip(record.iter().skip(1)) {
            let v = parse_cell(raw, row, label)?;
            if v <= 0.0 {
                return Err(Error::Csv {
                    row,
                    message: format!("column {label}: price must be positive, got {raw}"),
                });
            }
            p.push(v);
        }
        times.push(t);
        prices.push(PriceVector::new(p)?);
    }
    PricePath::new(times, prices, labels).map_err(|e| Error::Csv {
        row: 0,
        message: e.to_string(),
    })
}

/// Writes the path as CSV with shortest round-trip decimal formatting and LF
/// line endings.
pub fn write_csv<W: Write>(path: &PricePath, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(std::iter::once("time").chain(path.labels.iter().map(String::as_str)))
        .map_err(io)?;
    let mut fields: Vec<String> = Vec::with_capacity(path.n_assets() + 1);
    for (t, p) in path.times.iter().zip(&path.prices) {
        fields.clear();
        fields.push(format!("{t}"));
        fields.extend(p.as_slice().iter().map(|v| format!("{v}")));
        w.write_record(&fields).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// `P(t)` for every tick of the path.
pub fn index_series(path: &PricePath, weights: &AssetWeights) -> Result<Vec<f64>> {
    path.prices
        .iter()
        .map(|p| price_index(p, weights))
        .collect()
}
