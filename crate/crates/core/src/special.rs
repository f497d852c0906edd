//! Standard-normal tail function and Gaussian moments over intervals.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Right-tail probability `Q(u) = P(Z > u)` of a standard normal variable.
pub fn q_tail(u: f64) -> f64 {
    0.5 * libm::erfc(u * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// `P(a < Z < b)` for a standard normal `Z`, evaluated on whichever tail keeps
/// the subtraction free of cancellation.
pub fn std_normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let p = if a >= 0.0 {
        q_tail(a) - q_tail(b)
    } else if b <= 0.0 {
        q_tail(-b) - q_tail(-a)
    } else {
        1.0 - q_tail(-a) - q_tail(b)
    };
    p.max(0.0)
}

/// `∫_a^b u φ(u) du` for the standard normal density.
pub fn std_normal_first_moment(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    std_normal_pdf(a) - std_normal_pdf(b)
}

/// `∫_lo^hi y N(y; mean, sigma^2) dy`, the first moment of a Gaussian
/// restricted to an interval (infinite endpoints allowed).
pub fn gaussian_first_moment(lo: f64, hi: f64, mean: f64, sigma: f64) -> f64 {
    let a = (lo - mean) / sigma;
    let b = (hi - mean) / sigma;
    mean * std_normal_interval(a, b) + sigma * std_normal_first_moment(a, b)
}

/// `∫_a^∞ u² φ(u) du = a φ(a) + Q(a)`.
pub fn std_normal_upper_second_moment(a: f64) -> f64 {
    if a == f64::INFINITY {
        return 0.0;
    }
    if a == f64::NEG_INFINITY {
        return 1.0;
    }
    a * std_normal_pdf(a) + q_tail(a)
}
