//! Closed-form bounds: CRB, the limiting HCRB, and the tanh-product upper bound.

use crate::error::{Error, Result};
use crate::model::{ProblemConfig, SparseParam};
use crate::quadrature::{integrate, QuadratureSpec};

fn require_max_support(x: &SparseParam, config: &ProblemConfig) -> Result<()> {
    if x.has_max_support(config) {
        Ok(())
    } else {
        Err(Error::MaxSupportRequired {
            nonzeros: x.nnz(),
            s: config.s,
        })
    }
}

/// `S sigma^2` on maximal support, `N sigma^2` otherwise.
pub fn crb(x: &SparseParam, config: &ProblemConfig) -> f64 {
    if x.has_max_support(config) {
        config.s as f64 * config.sigma2
    } else {
        config.n as f64 * config.sigma2
    }
}

/// Limiting HCRB: `S sigma^2 + (N-S-1) e^{-xi^2/sigma^2} sigma^2` on maximal
/// support, `N sigma^2` otherwise.
pub fn hcrb_closed(x: &SparseParam, config: &ProblemConfig) -> f64 {
    match (x.has_max_support(config), x.snr()) {
        (true, Some(snr)) => {
            let (n, s) = (config.n as f64, config.s as f64);
            // N = S leaves no off-support term at all.
            let extra = if config.n > config.s {
                (n - s - 1.0) * (-snr).exp()
            } else {
                0.0
            };
            (s + extra) * config.sigma2
        }
        _ => config.n as f64 * config.sigma2,
    }
}

/// `g(x; sigma^2) = (2 pi sigma^2)^{-1/2} ∫_0^∞ (e^{-(x-y)^2/2σ²} - e^{-(x+y)^2/2σ²}) tanh(xy/σ²) dy`.
///
/// The integrand is written as `e^{-(x-y)^2/2σ²} (1 - e^{-2xy/σ²})`, which never
/// overflows. Even in `x` by construction and clamped to `[0, 1]`.
pub fn g_factor(x_l: f64, sigma2: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument("sigma^2 must be positive".into()));
    }
    quad.validate()?;
    let x = x_l.abs();
    if x == 0.0 {
        return Ok(0.0);
    }
    let sigma = sigma2.sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma2).sqrt();
    let f = |y: f64| {
        let d = (x - y) / sigma;
        let u = x * y / sigma2;
        (-0.5 * d * d).exp() * (-(-2.0 * u).exp_m1()) * u.tanh()
    };
    let upper = x + quad.truncation_sigmas * sigma;
    let v = integrate(f, 0.0, upper, &[x], quad)?;
    Ok((norm * v).clamp(0.0, 1.0))
}

/// Off-support component bound `(1 - ∏ g(x_l)) sigma^2`; the same for every
/// off-support index.
pub fn bb_upper_component(x: &SparseParam, config: &ProblemConfig, quad: &QuadratureSpec) -> Result<f64> {
    require_max_support(x, config)?;
    let mut prod = 1.0;
    for &l in x.support() {
        prod *= g_factor(x.values()[l], config.sigma2, quad)?;
    }
    Ok((1.0 - prod) * config.sigma2)
}

pub fn bb_upper(x: &SparseParam, config: &ProblemConfig, quad: &QuadratureSpec) -> Result<f64> {
    let comp = bb_upper_component(x, config, quad)?;
    Ok(config.s as f64 * config.sigma2 + (config.n - config.s) as f64 * comp)
}

/// `S sigma^2 + (N-S) 3^S e^{-xi^2/(2 sigma^2)} sigma^2`.
pub fn bb_upper_envelope(x: &SparseParam, config: &ProblemConfig) -> Result<f64> {
    require_max_support(x, config)?;
    let snr = x.snr().unwrap_or(0.0);
    let s = config.s as f64;
    Ok(s * config.sigma2 + (config.n - config.s) as f64 * 3f64.powi(config.s as i32) * (-0.5 * snr).exp() * config.sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_param;

    fn cfg(n: usize, s: usize, sigma2: f64) -> ProblemConfig {
        ProblemConfig::new(n, s, sigma2).unwrap()
    }

    #[test]
    fn crb_branches() {
        let c = cfg(5, 1, 1.0);
        assert_eq!(crb(&validate_param(&[2.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap(), &c), 1.0);
        assert_eq!(crb(&validate_param(&[0.0; 5], &c).unwrap(), &c), 5.0);
        let c = cfg(10, 4, 2.0);
        let mut v = vec![0.0; 10];
        v[..4].copy_from_slice(&[1.0, -1.0, 3.0, 2.0]);
        assert_eq!(crb(&validate_param(&v, &c).unwrap(), &c), 8.0);
    }

    #[test]
    fn hcrb_hand_values() {
        let c = cfg(5, 1, 1.0);
        let x = validate_param(&[2.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        assert!((hcrb_closed(&x, &c) - (1.0 + 3.0 * (-4.0f64).exp())).abs() < 1e-15);
        assert_eq!(hcrb_closed(&validate_param(&[0.0; 5], &c).unwrap(), &c), 5.0);
        let tiny = validate_param(&[1e-9, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        assert!((hcrb_closed(&tiny, &c) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn g_limits() {
        let q = QuadratureSpec::default();
        assert_eq!(g_factor(0.0, 1.0, &q).unwrap(), 0.0);
        assert!(g_factor(12.0, 1.0, &q).unwrap() > 1.0 - 1e-12);
        // Scale covariance: g(x; σ²) = g(x/σ; 1).
        let a = g_factor(3.0, 4.0, &q).unwrap();
        let b = g_factor(1.5, 1.0, &q).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn g_small_x_is_quadratic() {
        // For small x, tanh(xy) ≈ xy and the bracket ≈ 2xy e^{-y²/2} φ-weight:
        // g ≈ x² E[2 y² 1{y>0}] = x².
        let q = QuadratureSpec::default();
        let x = 1e-3;
        let g = g_factor(x, 1.0, &q).unwrap();
        assert!((g / (x * x) - 1.0).abs() < 1e-4, "g/x² = {}", g / (x * x));
    }

    #[test]
    fn bb_upper_limits() {
        let q = QuadratureSpec::default();
        let c = cfg(5, 1, 1.0);
        let lo = validate_param(&[1e-4, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        assert!((bb_upper(&lo, &c, &q).unwrap() - 5.0).abs() < 1e-6);
        let hi = validate_param(&[15.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        assert!((bb_upper(&hi, &c, &q).unwrap() - 1.0).abs() < 1e-9);
        let zero = validate_param(&[0.0; 5], &c).unwrap();
        assert!(matches!(bb_upper(&zero, &c, &q), Err(Error::MaxSupportRequired { .. })));
    }

    #[test]
    fn envelope_at_zero_snr_formula() {
        let c = cfg(5, 2, 1.0);
        let x = validate_param(&[1e-12, 1e-12, 0.0, 0.0, 0.0], &c).unwrap();
        assert!((bb_upper_envelope(&x, &c).unwrap() - (2.0 + 3.0 * 9.0)).abs() < 1e-9);
    }
}
