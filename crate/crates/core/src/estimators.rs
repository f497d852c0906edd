//! Estimators of `x` from a single observation `y`.

use crate::error::{Error, Result};
use crate::model::{top_s_indices, ProblemConfig, SparseParam};
use crate::quadrature::{integrate, QuadratureSpec};
use crate::special::std_normal_pdf;

/// Interval on which the no-UMVU counterexample's `h` is active.
pub const COUNTEREXAMPLE_WINDOW: (f64, f64) = (0.4, 0.6);

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    /// `x̂ = y`.
    Identity,
    /// Keep the S largest magnitudes.
    Ml,
    /// Keep `|y_k| >= threshold`.
    HardThreshold { threshold: f64 },
    /// Keep the given support.
    Oracle { support: Vec<usize> },
    /// Unbiased family: `y + a y_1 ∏ h^{(c,d)}(y_l) e_1`.
    Family { a: f64, c: f64, d: f64 },
    /// Unbiased estimator beating the LMVU variance at a particular point.
    Counterexample { a: f64 },
    /// Tanh-product correction matched to a reference parameter.
    TanhProduct { reference: SparseParam },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    kind: EstimatorKind,
    config: ProblemConfig,
}

impl Estimator {
    pub fn new(kind: EstimatorKind, config: ProblemConfig) -> Result<Self> {
        config.validate()?;
        match &kind {
            EstimatorKind::HardThreshold { threshold } if !(*threshold > 0.0) => {
                return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")))
            }
            EstimatorKind::Oracle { support } => {
                if support.len() != config.s || support.iter().any(|&i| i >= config.n) {
                    return Err(Error::InvalidArgument(format!(
                        "oracle support must hold S = {} distinct indices below N",
                        config.s
                    )));
                }
                let mut s = support.clone();
                s.sort_unstable();
                s.dedup();
                if s.len() != support.len() {
                    return Err(Error::InvalidArgument("oracle support has repeated indices".into()));
                }
            }
            EstimatorKind::Family { c, d, .. } => {
                if !(*c > 0.0 && *d > 0.0) {
                    return Err(Error::InvalidArgument("family parameters c and d must be positive".into()));
                }
                require_scope(&config)?;
            }
            EstimatorKind::Counterexample { .. } => require_scope(&config)?,
            EstimatorKind::TanhProduct { reference } => {
                if reference.len() != config.n {
                    return Err(Error::DimensionMismatch {
                        expected: config.n,
                        got: reference.len(),
                    });
                }
                if !reference.has_max_support(&config) {
                    return Err(Error::MaxSupportRequired {
                        nonzeros: reference.nnz(),
                        s: config.s,
                    });
                }
            }
            _ => {}
        }
        Ok(Estimator { kind, config })
    }

    pub fn kind(&self) -> &EstimatorKind {
        &self.kind
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn estimate(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        let mut scratch = Vec::new();
        self.estimate_into(y, &mut out, &mut scratch);
        out
    }

    /// Allocation-free variant for hot loops; `scratch` is reused between calls.
    pub fn estimate_into(&self, y: &[f64], out: &mut [f64], scratch: &mut Vec<usize>) {
        let c = &self.config;
        match &self.kind {
            EstimatorKind::Identity => out.copy_from_slice(y),
            EstimatorKind::Ml => {
                out.iter_mut().for_each(|v| *v = 0.0);
                top_s_indices(y, c.s, scratch);
                for &i in scratch.iter() {
                    out[i] = y[i];
                }
            }
            EstimatorKind::HardThreshold { threshold } => {
                for (o, &v) in out.iter_mut().zip(y) {
                    *o = if v.abs() >= *threshold { v } else { 0.0 };
                }
            }
            EstimatorKind::Oracle { support } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for &i in support {
                    out[i] = y[i];
                }
            }
            EstimatorKind::Family { a, c: lo, d } => {
                out.copy_from_slice(y);
                out[0] += a * y[0] * window_product(&y[1..=c.s], *lo, lo + d);
            }
            EstimatorKind::Counterexample { a } => {
                out.copy_from_slice(y);
                let (lo, hi) = COUNTEREXAMPLE_WINDOW;
                out[0] += a * y[0] * window_product(&y[1..=c.s], lo, hi);
            }
            EstimatorKind::TanhProduct { reference } => {
                let xv = reference.values();
                let prod: f64 = reference
                    .support()
                    .iter()
                    .map(|&l| (xv[l] * y[l] / c.sigma2).tanh())
                    .product();
                for (k, (o, &v)) in out.iter_mut().zip(y).enumerate() {
                    *o = if xv[k] != 0.0 { v } else { v - v * prod };
                }
            }
        }
    }
}

fn require_scope(config: &ProblemConfig) -> Result<()> {
    if config.s >= config.n {
        Err(Error::ScopeError { n: config.n })
    } else {
        Ok(())
    }
}

/// `sgn(y)` when `lo <= |y| <= hi`, else 0.
pub fn window_sign(y: f64, lo: f64, hi: f64) -> f64 {
    let m = y.abs();
    if m >= lo && m <= hi {
        y.signum()
    } else {
        0.0
    }
}

fn window_product(ys: &[f64], lo: f64, hi: f64) -> f64 {
    let mut p = 1.0;
    for &v in ys {
        p *= window_sign(v, lo, hi);
        if p == 0.0 {
            break;
        }
    }
    p
}

fn check_len(y: &[f64], config: &ProblemConfig) -> Result<()> {
    if y.len() != config.n {
        Err(Error::DimensionMismatch {
            expected: config.n,
            got: y.len(),
        })
    } else {
        Ok(())
    }
}

fn run(kind: EstimatorKind, y: &[f64], config: &ProblemConfig) -> Result<Vec<f64>> {
    check_len(y, config)?;
    Ok(Estimator::new(kind, *config)?.estimate(y))
}

pub fn ml_estimate(y: &[f64], config: &ProblemConfig) -> Result<Vec<f64>> {
    run(EstimatorKind::Ml, y, config)
}

/// `sigma sqrt(2 ln N)`.
pub fn default_ht_threshold(config: &ProblemConfig) -> f64 {
    config.sigma() * (2.0 * (config.n as f64).ln()).sqrt()
}

pub fn ht_estimate(y: &[f64], threshold: f64, config: &ProblemConfig) -> Result<Vec<f64>> {
    run(EstimatorKind::HardThreshold { threshold }, y, config)
}

pub fn oracle_estimate(y: &[f64], support: &[usize], config: &ProblemConfig) -> Result<Vec<f64>> {
    run(
        EstimatorKind::Oracle {
            support: support.to_vec(),
        },
        y,
        config,
    )
}

pub fn family_estimate(y: &[f64], a: f64, c: f64, d: f64, config: &ProblemConfig) -> Result<Vec<f64>> {
    run(EstimatorKind::Family { a, c, d }, y, config)
}

pub fn counterexample_estimate(y: &[f64], a: f64, config: &ProblemConfig) -> Result<Vec<f64>> {
    run(EstimatorKind::Counterexample { a }, y, config)
}

pub fn tanh_product_estimate(y: &[f64], reference: &SparseParam, config: &ProblemConfig) -> Result<Vec<f64>> {
    run(
        EstimatorKind::TanhProduct {
            reference: reference.clone(),
        },
        y,
        config,
    )
}

/// The point `x' = (0, 1, ..., 1, 0, ..., 0)` (S ones) used with the counterexample.
pub fn counterexample_point(config: &ProblemConfig) -> Result<SparseParam> {
    require_scope(config)?;
    let mut v = vec![0.0; config.n];
    v[1..=config.s].iter_mut().for_each(|e| *e = 1.0);
    SparseParam::new(v, config)
}

/// `E{h(y)}` and `E{h(y)^2}` for `y ~ N(1, sigma^2)` and the counterexample window.
pub fn counterexample_window_moments(sigma2: f64, quad: &QuadratureSpec) -> Result<(f64, f64)> {
    let sigma = sigma2.sqrt();
    let (lo, hi) = COUNTEREXAMPLE_WINDOW;
    let dens = |y: f64| std_normal_pdf((y - 1.0) / sigma) / sigma;
    let pos = integrate(dens, lo, hi, &[], quad)?;
    let neg = integrate(dens, -hi, -lo, &[], quad)?;
    Ok((pos - neg, pos + neg))
}

/// Correction weight `A = -beta / (2 alpha)` minimising the variance of the
/// first component at the counterexample point.
pub fn counterexample_optimal_a(config: &ProblemConfig, quad: &QuadratureSpec) -> Result<f64> {
    require_scope(config)?;
    let (eh, eh2) = counterexample_window_moments(config.sigma2, quad)?;
    let s = config.s as i32;
    let ey1 = config.sigma2;
    let alpha = ey1 * eh2.powi(s);
    let beta = 2.0 * ey1 * eh.powi(s);
    if !(alpha > 1e-300) {
        return Err(Error::DegenerateAlpha(alpha));
    }
    Ok(-beta / (2.0 * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, s: usize) -> ProblemConfig {
        ProblemConfig::new(n, s, 1.0).unwrap()
    }

    #[test]
    fn ml_examples() {
        let c = cfg(5, 1);
        assert_eq!(ml_estimate(&[3.0, -1.0, 0.5, 0.0, 0.0], &c).unwrap(), vec![3.0, 0.0, 0.0, 0.0, 0.0]);
        let full = cfg(3, 3);
        assert_eq!(ml_estimate(&[1.0, -2.0, 3.0], &full).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn ht_threshold_and_boundary() {
        let c = cfg(10, 4);
        let t = default_ht_threshold(&c);
        assert!((t - 2.1459660262893472).abs() < 1e-12);
        let mut y = vec![0.0; 10];
        y[0] = 2.0;
        y[1] = 2.2;
        y[2] = -t;
        let e = ht_estimate(&y, t, &c).unwrap();
        assert_eq!(&e[..3], &[0.0, 2.2, -t]);
        assert!(ht_estimate(&y, 0.0, &c).is_err());
    }

    #[test]
    fn oracle_keeps_support() {
        let c = cfg(3, 1);
        assert_eq!(oracle_estimate(&[1.0, 7.0, 2.0], &[0], &c).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(oracle_estimate(&[1.0, 7.0, 2.0], &[0, 1], &c).is_err());
    }

    #[test]
    fn family_inactive_and_active() {
        let c = cfg(4, 2);
        let y = [1.5, 0.5, 3.0, -2.0];
        assert_eq!(family_estimate(&y, 2.0, 0.4, 0.2, &c).unwrap(), y.to_vec());
        let y = [1.5, 0.5, -0.6, -2.0];
        let e = family_estimate(&y, 2.0, 0.4, 0.2, &c).unwrap();
        assert_eq!(e[0], 1.5 + 2.0 * 1.5 * (1.0 * -1.0));
        assert_eq!(&e[1..], &y[1..]);
        assert!(matches!(family_estimate(&[0.0; 2], 1.0, 1.0, 1.0, &cfg(2, 2)), Err(Error::ScopeError { .. })));
    }

    #[test]
    fn counterexample_a_is_negative() {
        let q = QuadratureSpec::default();
        let a = counterexample_optimal_a(&cfg(5, 1), &q).unwrap();
        assert!(a < 0.0);
        // For S = 1 the ratio is (P+ - P-) / (P+ + P-) of the window masses.
        let p_pos = crate::special::std_normal_interval(-0.6, -0.4);
        let p_neg = crate::special::std_normal_interval(-1.6, -1.4);
        assert!((a + (p_pos - p_neg) / (p_pos + p_neg)).abs() < 1e-9);
        assert!((a + 0.46).abs() < 0.01);
    }

    #[test]
    fn tanh_product_saturation() {
        let c = cfg(3, 1);
        let r = SparseParam::new(vec![50.0, 0.0, 0.0], &c).unwrap();
        let e = tanh_product_estimate(&[1.0, 0.7, -0.3], &r, &c).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 0.0]);
        let e = tanh_product_estimate(&[-1.0, 0.7, -0.3], &r, &c).unwrap();
        assert_eq!(e, vec![-1.0, 1.4, -0.6]);
    }
}
