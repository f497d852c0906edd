//! Parameter sweeps behind the four reference figures, plus the tabular
//! result type and its CSV/JSON writers.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bb_numeric::{bb_upper_numeric, UnbiasednessGrid, DEFAULT_GRID_ID};
use crate::bounds_closed::{bb_upper, bb_upper_envelope, crb, hcrb_closed};
use crate::bounds_testpoint::{build_extended_testpoints, hcrb_eval, EIG_TOL_REL};
use crate::error::{Error, Result};
use crate::estimators::default_ht_threshold;
use crate::model::{ProblemConfig, SparseParam};
use crate::par;
use crate::quadrature::QuadratureSpec;
use crate::risk::{ht_mse_exact, ml_mse_exact};
use crate::rng::{derive_seed, NormalStream};

/// Build identifier recorded in output metadata.
pub const VERSION: &str = env!("SPARSE_BARANKIN_DESCRIBE");

/// Relative offset of the extended test points, in units of sigma.
pub const DEFAULT_ALPHA_SIGMAS: f64 = 0.02;

/// Provenance attached to every result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub experiment: String,
    pub version: String,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub quadrature: QuadratureSpec,
    pub q: Option<usize>,
    pub constraint_grid: Option<String>,
    pub config: ProblemConfig,
}

impl Metadata {
    pub fn new(experiment: &str, config: ProblemConfig, quadrature: QuadratureSpec) -> Self {
        Metadata {
            experiment: experiment.to_string(),
            version: VERSION.to_string(),
            timestamp: timestamp_now(),
            seed: None,
            threads: None,
            quadrature,
            q: None,
            constraint_grid: None,
            config,
        }
    }
}

fn timestamp_now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A table keyed by SNR (dB) with named value columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: ProblemConfig,
    pub snr_db: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
    pub metadata: Metadata,
}

impl SweepResult {
    pub fn new(config: ProblemConfig, snr_db: Vec<f64>, metadata: Metadata) -> Self {
        SweepResult {
            config,
            snr_db,
            columns: Vec::new(),
            metadata,
        }
    }

    pub fn push_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.snr_db.len() {
            return Err(Error::DimensionMismatch {
                expected: self.snr_db.len(),
                got: values.len(),
            });
        }
        if self.column(name).is_some() || name == "snr_db" {
            return Err(Error::InvalidArgument(format!("duplicate column {name}")));
        }
        self.columns.push((name.to_string(), values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if name == "snr_db" {
            return Some(&self.snr_db);
        }
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn column_names(&self) -> Vec<&str> {
        std::iter::once("snr_db")
            .chain(self.columns.iter().map(|(n, _)| n.as_str()))
            .collect()
    }

    /// Header plus one row per entry, 17 significant digits, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut s = self.column_names().join(",");
        s.push('\n');
        for i in 0..self.snr_db.len() {
            write_num(&mut s, self.snr_db[i]);
            for (_, col) in &self.columns {
                s.push(',');
                write_num(&mut s, col[i]);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let mut cols = Map::new();
        cols.insert("snr_db".into(), json!(self.snr_db));
        for (n, v) in &self.columns {
            cols.insert(n.clone(), json!(v));
        }
        json!({ "meta": self.metadata, "columns": Value::Object(cols) })
    }

    pub fn write<W: Write>(&self, mut w: W, format: OutputFormat) -> std::io::Result<()> {
        match format {
            OutputFormat::Csv => w.write_all(self.to_csv().as_bytes()),
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).map_err(std::io::Error::other)?;
                s.push('\n');
                w.write_all(s.as_bytes())
            }
        }
    }
}

fn write_num(s: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(s, "{v:.16e}");
    } else {
        let _ = write!(s, "{v}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Scales `direction` so that its smallest nonzero magnitude is `sigma 10^{snr_db/20}`.
pub fn scale_to_snr(direction: &[f64], snr_db: f64, config: &ProblemConfig) -> Result<SparseParam> {
    let dir = SparseParam::new(direction.to_vec(), config)?;
    let xi = dir
        .xi()
        .ok_or_else(|| Error::InvalidArgument("direction vector must be nonzero".into()))?;
    let target = config.sigma() * 10f64.powf(snr_db / 20.0);
    let c = target / xi;
    SparseParam::new(direction.iter().map(|v| v * c).collect(), config)
}

fn unzip_rows<const K: usize>(rows: Vec<[f64; K]>) -> [Vec<f64>; K] {
    std::array::from_fn(|j| rows.iter().map(|r| r[j]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Params {
    pub config: ProblemConfig,
    pub snr_db: Vec<f64>,
    pub q: usize,
    pub alpha_sigmas: f64,
    pub quad: QuadratureSpec,
}

impl Default for Fig1Params {
    fn default() -> Self {
        Fig1Params {
            config: ProblemConfig {
                n: 5,
                s: 1,
                sigma2: 1.0,
            },
            snr_db: linear_grid(-30.0, 10.0, 41),
            q: 20,
            alpha_sigmas: DEFAULT_ALPHA_SIGMAS,
            quad: QuadratureSpec::default(),
        }
    }
}

/// Bounds on the minimum unbiased MSE at `x = c e_1`: the limiting HCRB, the
/// extended-set HCRB, and the closed-form and numerical upper bounds.
pub fn run_fig1(p: &Fig1Params) -> Result<SweepResult> {
    let c = p.config;
    c.validate()?;
    let mut dir = vec![0.0; c.n];
    dir[..c.s].iter_mut().for_each(|v| *v = 1.0);
    let alpha = p.alpha_sigmas * c.sigma();
    let rows = par::try_map_indexed(p.snr_db.len(), |i| -> Result<[f64; 4]> {
        let x = scale_to_snr(&dir, p.snr_db[i], &c)?;
        let tp = build_extended_testpoints(&x, alpha, &c)?;
        let ug = UnbiasednessGrid::default_for(&x, &c);
        Ok([
            hcrb_closed(&x, &c),
            hcrb_eval(&tp, c.sigma2, EIG_TOL_REL)?,
            bb_upper(&x, &c, &p.quad)?,
            bb_upper_numeric(&x, p.q, &ug, &c)?,
        ])
    })?;
    let mut meta = Metadata::new("fig1", c, p.quad);
    meta.q = Some(p.q);
    meta.constraint_grid = Some(DEFAULT_GRID_ID.to_string());
    let mut r = SweepResult::new(c, p.snr_db.clone(), meta);
    let [a, b, d, e] = unzip_rows(rows);
    r.push_column("hcrb", a)?;
    r.push_column("hcrb_v", b)?;
    r.push_column("bb_c", d)?;
    r.push_column("bb_c_prime", e)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Params {
    pub config: ProblemConfig,
    pub snr_ratios: Vec<f64>,
    pub n_vectors: usize,
    pub seed: u64,
    pub quad: QuadratureSpec,
}

impl Default for Fig2Params {
    fn default() -> Self {
        Fig2Params {
            config: ProblemConfig {
                n: 10,
                s: 4,
                sigma2: 1.0,
            },
            snr_ratios: vec![4.0, 9.0, 16.0, 25.0],
            n_vectors: 100,
            seed: 0,
            quad: QuadratureSpec::default(),
        }
    }
}

/// Random parameter with smallest magnitude exactly `xi`: entry 0 equals
/// `xi`, entries `1..S` are `xi (1 + 3 sigma |q|)` with `q ~ N(0, 1)`.
pub fn fig2_vector(xi: f64, config: &ProblemConfig, rng: &mut NormalStream) -> Result<SparseParam> {
    let mut v = vec![0.0; config.n];
    v[0] = xi;
    for e in v.iter_mut().take(config.s).skip(1) {
        *e = xi * (1.0 + 3.0 * config.sigma() * rng.standard_normal().abs());
    }
    SparseParam::new(v, config)
}

/// Exact ML risk over random parameters sharing the same smallest magnitude.
///
/// One row per (ratio, vector); `mean_mse_ml` and `std_mse_ml` repeat the
/// per-ratio summary (population std) on every row of that ratio.
pub fn run_fig2(p: &Fig2Params) -> Result<SweepResult> {
    let c = p.config;
    c.validate()?;
    if p.n_vectors == 0 {
        return Err(Error::InvalidArgument("n_vectors must be positive".into()));
    }
    if p.snr_ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("SNR ratios must be positive".into()));
    }
    let nv = p.n_vectors;
    let total = p.snr_ratios.len() * nv;
    let values = par::try_map_indexed(total, |i| -> Result<(f64, f64)> {
        let ratio = p.snr_ratios[i / nv];
        let xi = (ratio * c.sigma2).sqrt();
        let mut rng = NormalStream::new(derive_seed(p.seed, i as u64));
        let x = fig2_vector(xi, &c, &mut rng)?;
        Ok((xi, ml_mse_exact(&x, &c, &p.quad)?))
    })?;
    let mut snr_db = Vec::with_capacity(total);
    let (mut ratio_col, mut idx_col, mut xi_col, mut mse_col, mut mean_col, mut std_col) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (ri, &ratio) in p.snr_ratios.iter().enumerate() {
        let block = &values[ri * nv..(ri + 1) * nv];
        let mean = block.iter().map(|v| v.1).sum::<f64>() / nv as f64;
        let std = (block.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / nv as f64).sqrt();
        for (vi, &(xi, mse)) in block.iter().enumerate() {
            snr_db.push(10.0 * ratio.log10());
            ratio_col.push(ratio);
            idx_col.push(vi as f64);
            xi_col.push(xi);
            mse_col.push(mse);
            mean_col.push(mean);
            std_col.push(std);
        }
    }
    let mut meta = Metadata::new("fig2", c, p.quad);
    meta.seed = Some(p.seed);
    let mut r = SweepResult::new(c, snr_db, meta);
    r.push_column("snr_ratio", ratio_col)?;
    r.push_column("vector", idx_col)?;
    r.push_column("xi", xi_col)?;
    r.push_column("mse_ml", mse_col)?;
    r.push_column("mean_mse_ml", mean_col)?;
    r.push_column("std_mse_ml", std_col)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Params {
    pub config: ProblemConfig,
    pub snr_db: Vec<f64>,
    /// Hard threshold; `None` selects `sigma sqrt(2 ln N)`.
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub quad: QuadratureSpec,
}

impl Default for Fig3Params {
    fn default() -> Self {
        Fig3Params {
            config: ProblemConfig {
                n: 10,
                s: 4,
                sigma2: 1.0,
            },
            snr_db: linear_grid(-20.0, 20.0, 41),
            threshold: None,
            seed: None,
            quad: QuadratureSpec::default(),
        }
    }
}

/// Bounds against the exact ML and HT risks along `x = c (1, ..., 1, 0, ..., 0)`.
pub fn run_fig3(p: &Fig3Params) -> Result<SweepResult> {
    let c = p.config;
    c.validate()?;
    let t = p.threshold.unwrap_or_else(|| default_ht_threshold(&c));
    let mut dir = vec![0.0; c.n];
    dir[..c.s].iter_mut().for_each(|v| *v = 1.0);
    let rows = par::try_map_indexed(p.snr_db.len(), |i| -> Result<[f64; 5]> {
        let x = scale_to_snr(&dir, p.snr_db[i], &c)?;
        Ok([
            crb(&x, &c),
            hcrb_closed(&x, &c),
            bb_upper(&x, &c, &p.quad)?,
            ml_mse_exact(&x, &c, &p.quad)?,
            ht_mse_exact(&x, t, &c)?,
        ])
    })?;
    let mut meta = Metadata::new("fig3", c, p.quad);
    meta.seed = p.seed;
    let mut r = SweepResult::new(c, p.snr_db.clone(), meta);
    for (name, col) in ["crb", "hcrb", "bb_c", "mse_ml", "mse_ht"].into_iter().zip(unzip_rows(rows)) {
        r.push_column(name, col)?;
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Params {
    pub config: ProblemConfig,
    pub snr_db: Vec<f64>,
    pub quad: QuadratureSpec,
}

impl Default for Fig4Params {
    fn default() -> Self {
        Fig4Params {
            config: ProblemConfig {
                n: 10,
                s: 4,
                sigma2: 1.0,
            },
            snr_db: linear_grid(-20.0, 20.0, 41),
            quad: QuadratureSpec::default(),
        }
    }
}

/// The three direction families compared in the ratio sweep.
pub fn fig4_directions(config: &ProblemConfig) -> [Vec<f64>; 3] {
    let base = |first: f64| {
        let mut v = vec![0.0; config.n];
        v[..config.s].iter_mut().for_each(|e| *e = 1.0);
        v[0] = first;
        v
    };
    [base(1.0), base(10.0), base(0.1)]
}

/// `bb_c / hcrb` for the three direction families, SNR measured on the smallest entry.
pub fn run_fig4(p: &Fig4Params) -> Result<SweepResult> {
    let c = p.config;
    c.validate()?;
    let dirs = fig4_directions(&c);
    let rows = par::try_map_indexed(p.snr_db.len(), |i| -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (o, d) in out.iter_mut().zip(&dirs) {
            let x = scale_to_snr(d, p.snr_db[i], &c)?;
            *o = bb_upper(&x, &c, &p.quad)? / hcrb_closed(&x, &c);
        }
        Ok(out)
    })?;
    let mut r = SweepResult::new(c, p.snr_db.clone(), Metadata::new("fig4", c, p.quad));
    for (name, col) in ["ratio_r", "ratio_r2", "ratio_r3"].into_iter().zip(unzip_rows(rows)) {
        r.push_column(name, col)?;
    }
    Ok(r)
}

/// Closed-form bounds (and optionally the numerical ones) along `c * direction`.
pub fn bounds_sweep(
    direction: &[f64],
    config: &ProblemConfig,
    snr_db: &[f64],
    q: Option<usize>,
    quad: &QuadratureSpec,
) -> Result<SweepResult> {
    config.validate()?;
    let dir = SparseParam::new(direction.to_vec(), config)?;
    if !dir.has_max_support(config) {
        return Err(Error::MaxSupportRequired {
            nonzeros: dir.nnz(),
            s: config.s,
        });
    }
    let c = *config;
    let rows = par::try_map_indexed(snr_db.len(), |i| -> Result<[f64; 6]> {
        let x = scale_to_snr(direction, snr_db[i], &c)?;
        let (hv, bp) = match q {
            Some(q) => {
                let tp = build_extended_testpoints(&x, DEFAULT_ALPHA_SIGMAS * c.sigma(), &c)?;
                let ug = UnbiasednessGrid::default_for(&x, &c);
                (hcrb_eval(&tp, c.sigma2, EIG_TOL_REL)?, bb_upper_numeric(&x, q, &ug, &c)?)
            }
            None => (f64::NAN, f64::NAN),
        };
        Ok([crb(&x, &c), hcrb_closed(&x, &c), bb_upper(&x, &c, quad)?, bb_upper_envelope(&x, &c)?, hv, bp])
    })?;
    let mut meta = Metadata::new("bounds-sweep", c, *quad);
    meta.q = q;
    if q.is_some() {
        meta.constraint_grid = Some(DEFAULT_GRID_ID.to_string());
    }
    let mut r = SweepResult::new(c, snr_db.to_vec(), meta);
    let cols = unzip_rows(rows);
    let names = ["crb", "hcrb", "bb_c", "envelope", "hcrb_v", "bb_c_prime"];
    let keep = if q.is_some() { 6 } else { 4 };
    for (name, col) in names.into_iter().zip(cols).take(keep) {
        r.push_column(name, col)?;
    }
    Ok(r)
}
