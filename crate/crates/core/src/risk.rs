//! Mean-squared-error evaluation: Monte Carlo for any estimator, exact
//! one-dimensional integrals for the ML and hard-thresholding estimators.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::model::{ProblemConfig, SparseParam};
use crate::par;
use crate::quadrature::{integrate, QuadratureSpec};
use crate::rng::{derive_seed, NormalStream};
use crate::special::{std_normal_interval, std_normal_pdf, std_normal_upper_second_moment};

pub use crate::special::q_tail;

/// Trials per independently seeded block. Fixed so results do not depend on
/// the number of worker threads.
pub const MC_BLOCK: usize = 4096;

/// Largest N accepted by the exact ML risk (its sums run over subsets of N-1 indices).
pub const MAX_EXACT_N: usize = 20;

pub const MIN_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub mse: f64,
    pub bias: Vec<f64>,
    /// Sum over components of the unbiased (n-1) sample variances.
    pub variance: f64,
    pub per_component_mse: Vec<f64>,
    /// Standard error of `mse` (sample std of the squared error over sqrt(n)).
    pub std_error: Option<f64>,
    pub n_trials: Option<usize>,
}

#[derive(Clone)]
struct Partial {
    n: usize,
    sum_d: Vec<f64>,
    sum_d2: Vec<f64>,
    sum_se: f64,
    sum_se2: f64,
}

impl Partial {
    fn zero(dim: usize) -> Self {
        Partial {
            n: 0,
            sum_d: vec![0.0; dim],
            sum_d2: vec![0.0; dim],
            sum_se: 0.0,
            sum_se2: 0.0,
        }
    }

    fn add(&mut self, o: &Partial) {
        self.n += o.n;
        for k in 0..self.sum_d.len() {
            self.sum_d[k] += o.sum_d[k];
            self.sum_d2[k] += o.sum_d2[k];
        }
        self.sum_se += o.sum_se;
        self.sum_se2 += o.sum_se2;
    }
}

fn check_x(x: &SparseParam, config: &ProblemConfig) -> Result<()> {
    if x.len() != config.n {
        return Err(Error::DimensionMismatch {
            expected: config.n,
            got: x.len(),
        });
    }
    Ok(())
}

fn n_blocks(n_trials: usize) -> usize {
    n_trials.div_ceil(MC_BLOCK)
}

fn block_len(n_trials: usize, b: usize) -> usize {
    MC_BLOCK.min(n_trials - b * MC_BLOCK)
}

/// Runs `per_trial(y)` over the fixed block schedule and returns per-block results in order.
fn run_blocks<T, F>(x: &SparseParam, config: &ProblemConfig, n_trials: usize, seed: u64, per_block: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut dyn FnMut(&mut [f64]), usize) -> T + Sync + Send,
{
    let sigma = config.sigma();
    par::map_indexed(n_blocks(n_trials), |b| {
        let mut rng = NormalStream::new(derive_seed(seed, b as u64));
        let mut draw = |y: &mut [f64]| {
            for (yk, &xk) in y.iter_mut().zip(x.values()) {
                *yk = xk + sigma * rng.standard_normal();
            }
        };
        per_block(&mut draw, block_len(n_trials, b))
    })
}

/// Monte Carlo risk of `est` at `x`.
///
/// Trial `i` of block `b` uses the `i`-th draw of the stream seeded with
/// `derive_seed(master_seed, b)`; blocks are reduced in index order, so the
/// report is bit-identical for any thread count.
pub fn monte_carlo_risk(
    est: &Estimator,
    x: &SparseParam,
    config: &ProblemConfig,
    n_trials: usize,
    master_seed: u64,
) -> Result<RiskReport> {
    check_x(x, config)?;
    if n_trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_TRIALS} trials, got {n_trials}")));
    }
    let n = config.n;
    let xv = x.values();
    let parts = run_blocks(x, config, n_trials, master_seed, |draw, len| {
        let mut p = Partial::zero(n);
        let mut y = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut scratch = Vec::with_capacity(n);
        for _ in 0..len {
            draw(&mut y);
            est.estimate_into(&y, &mut out, &mut scratch);
            let mut se = 0.0;
            for k in 0..n {
                let d = out[k] - xv[k];
                p.sum_d[k] += d;
                p.sum_d2[k] += d * d;
                se += d * d;
            }
            p.sum_se += se;
            p.sum_se2 += se * se;
        }
        p.n = len;
        p
    });
    let mut tot = Partial::zero(n);
    for p in &parts {
        tot.add(p);
    }
    let nf = tot.n as f64;
    let bias: Vec<f64> = tot.sum_d.iter().map(|s| s / nf).collect();
    let per_component_mse: Vec<f64> = tot.sum_d2.iter().map(|s| s / nf).collect();
    let variance = (0..n)
        .map(|k| ((tot.sum_d2[k] - nf * bias[k] * bias[k]) / (nf - 1.0)).max(0.0))
        .sum();
    let mse = tot.sum_se / nf;
    let var_se = ((tot.sum_se2 / nf - mse * mse) * nf / (nf - 1.0)).max(0.0);
    Ok(RiskReport {
        mse,
        bias,
        variance,
        per_component_mse,
        std_error: Some((var_se / nf).sqrt()),
        n_trials: Some(tot.n),
    })
}

/// Paired comparison on common noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedDifference {
    /// Mean of `||x̂_a - x||² - ||x̂_b - x||²`.
    pub mean: f64,
    pub std_error: f64,
    pub n_trials: usize,
}

/// Difference in MSE between two estimators evaluated on the same observations.
pub fn monte_carlo_mse_difference(
    est_a: &Estimator,
    est_b: &Estimator,
    x: &SparseParam,
    config: &ProblemConfig,
    n_trials: usize,
    master_seed: u64,
) -> Result<PairedDifference> {
    check_x(x, config)?;
    if n_trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_TRIALS} trials, got {n_trials}")));
    }
    let n = config.n;
    let xv = x.values();
    let parts = run_blocks(x, config, n_trials, master_seed, |draw, len| {
        let mut y = vec![0.0; n];
        let (mut oa, mut ob) = (vec![0.0; n], vec![0.0; n]);
        let mut scratch = Vec::with_capacity(n);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..len {
            draw(&mut y);
            est_a.estimate_into(&y, &mut oa, &mut scratch);
            est_b.estimate_into(&y, &mut ob, &mut scratch);
            let mut d = 0.0;
            for k in 0..n {
                d += (oa[k] - xv[k]).powi(2) - (ob[k] - xv[k]).powi(2);
            }
            s1 += d;
            s2 += d * d;
        }
        (s1, s2)
    });
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let nf = n_trials as f64;
    let mean = s1 / nf;
    let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Ok(PairedDifference {
        mean,
        std_error: (var / nf).sqrt(),
        n_trials,
    })
}

fn guard(config: &ProblemConfig) -> Result<()> {
    if config.n > MAX_EXACT_N {
        Err(Error::DimensionGuard {
            n: config.n,
            max: MAX_EXACT_N,
        })
    } else {
        Ok(())
    }
}

/// `P(|y_m| > u)` and `P(|y_m| < u)` for `y_m ~ N(x_m, sigma^2)`.
fn exceed_pair(u: f64, xm: f64, sigma: f64) -> (f64, f64) {
    let above = q_tail((u - xm) / sigma) + q_tail((u + xm) / sigma);
    let below = std_normal_interval((-u - xm) / sigma, (u - xm) / sigma);
    (above, below)
}

/// Probability that at least `need` of `r` i.i.d. Bernoulli(p) trials succeed.
fn binomial_tail(r: usize, need: usize, p: f64, q: f64) -> f64 {
    if need > r {
        return 0.0;
    }
    let mut total = 0.0;
    let mut coef = 1.0f64;
    for j in 0..=r {
        if j >= need {
            total += coef * p.powi(j as i32) * q.powi((r - j) as i32);
        }
        coef = coef * (r - j) as f64 / (j + 1) as f64;
    }
    total
}

/// `P(y_k is not among the S largest magnitudes | y_k = y)`.
///
/// Subsets are enumerated only over the support; the i.i.d. off-support
/// coordinates collapse into a binomial tail.
pub fn prob_not_in_top_s(x: &SparseParam, k: usize, y: f64, config: &ProblemConfig) -> Result<f64> {
    guard(config)?;
    check_x(x, config)?;
    if k >= config.n {
        return Err(Error::InvalidArgument(format!("component index {k} out of range")));
    }
    Ok(prob_not_in_top_s_unchecked(x, k, y, config))
}

fn prob_not_in_top_s_unchecked(x: &SparseParam, k: usize, y: f64, config: &ProblemConfig) -> f64 {
    let sigma = config.sigma();
    let u = y.abs();
    let xv = x.values();
    let on: Vec<(f64, f64)> = x
        .support()
        .iter()
        .filter(|&&m| m != k)
        .map(|&m| exceed_pair(u, xv[m], sigma))
        .collect();
    let r = config.n - 1 - on.len();
    let p_off = 2.0 * q_tail(u / sigma);
    let q_off = std_normal_interval(-u / sigma, u / sigma);
    let s = config.s;
    let mut total = 0.0;
    for mask in 0u32..(1u32 << on.len()) {
        let a = mask.count_ones() as usize;
        let need = s.saturating_sub(a);
        if need > r {
            continue;
        }
        let mut w = 1.0;
        for (i, &(above, below)) in on.iter().enumerate() {
            w *= if mask >> i & 1 == 1 { above } else { below };
        }
        total += w * binomial_tail(r, need, p_off, q_off);
    }
    total.clamp(0.0, 1.0)
}

/// Brute-force version summing over every subset of the other N-1 indices.
pub fn prob_not_in_top_s_enumerated(x: &SparseParam, k: usize, y: f64, config: &ProblemConfig) -> Result<f64> {
    guard(config)?;
    check_x(x, config)?;
    let sigma = config.sigma();
    let u = y.abs();
    let others: Vec<(f64, f64)> = (0..config.n)
        .filter(|&m| m != k)
        .map(|m| exceed_pair(u, x.values()[m], sigma))
        .collect();
    let mut total = 0.0;
    for mask in 0u32..(1u32 << others.len()) {
        if (mask.count_ones() as usize) < config.s {
            continue;
        }
        let mut w = 1.0;
        for (i, &(above, below)) in others.iter().enumerate() {
            w *= if mask >> i & 1 == 1 { above } else { below };
        }
        total += w;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Exact MSE of the ML estimator, one 1-D integral pair per component.
pub fn ml_mse_exact(x: &SparseParam, config: &ProblemConfig, quad: &QuadratureSpec) -> Result<f64> {
    guard(config)?;
    check_x(x, config)?;
    quad.validate()?;
    if config.s == config.n {
        return Ok(config.n as f64 * config.sigma2);
    }
    let sigma = config.sigma();
    let parts = par::try_map_indexed(config.n, |k| {
        let xk = x.values()[k];
        let dens = |y: f64| std_normal_pdf((y - xk) / sigma) / sigma;
        let lo = xk - quad.truncation_sigmas * sigma;
        let hi = xk + quad.truncation_sigmas * sigma;
        let e1 = integrate(
            |y| y * prob_not_in_top_s_unchecked(x, k, y, config) * dens(y),
            lo,
            hi,
            &[0.0, xk],
            quad,
        )?;
        let e2 = integrate(
            |y| y * y * prob_not_in_top_s_unchecked(x, k, y, config) * dens(y),
            lo,
            hi,
            &[0.0, xk],
            quad,
        )?;
        let mean = xk - e1;
        let power = config.sigma2 + xk * xk - e2;
        Ok(power - 2.0 * mean * xk + xk * xk)
    })?;
    Ok(parts.iter().sum())
}

/// Exact MSE of hard thresholding at `threshold`.
pub fn ht_mse_exact(x: &SparseParam, threshold: f64, config: &ProblemConfig) -> Result<f64> {
    check_x(x, config)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    let sigma = config.sigma();
    Ok(x
        .values()
        .iter()
        .map(|&xk| {
            let a = (threshold - xk) / sigma;
            let b = (-threshold - xk) / sigma;
            let kept = std_normal_upper_second_moment(a) + std_normal_upper_second_moment(-b);
            config.sigma2 * kept + xk * xk * std_normal_interval(b, a)
        })
        .sum())
}
