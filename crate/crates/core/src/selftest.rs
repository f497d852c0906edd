//! Fast runtime self-checks of the core identities, for `ssnm selftest`.

use crate::bb_numeric::{bb_upper_numeric, UnbiasednessGrid};
use crate::bounds_closed::{bb_upper, bb_upper_envelope, g_factor, hcrb_closed};
use crate::bounds_testpoint::{
    build_crb_testpoints, build_hcrb_testpoints, hcrb_eval, hcrb_finite_t, structured_inverse,
    StructuredMatrixParams, EIG_TOL_REL,
};
use crate::error::Result;
use crate::model::{hard_sparsify, ProblemConfig, SparseParam};
use crate::quadrature::QuadratureSpec;
use crate::risk::{prob_not_in_top_s, prob_not_in_top_s_enumerated};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    match f() {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn e1(n: usize, s: usize, c: f64) -> Result<(ProblemConfig, SparseParam)> {
    let cfg = ProblemConfig::new(n, s, 1.0)?;
    let mut v = vec![0.0; n];
    v[..s].iter_mut().for_each(|e| *e = c);
    Ok((cfg, SparseParam::new(v, &cfg)?))
}

pub fn run_selftest() -> Vec<CheckOutcome> {
    let quad = QuadratureSpec::default();
    vec![
        check("hard_sparsify_idempotent", || {
            let y = [0.3, -2.0, 1.7, 0.1, -0.9];
            let once = hard_sparsify(&y, 2)?;
            Ok((hard_sparsify(&once, 2)? == once, format!("{once:?}")))
        }),
        check("g_factor_range_and_tail_bound", || {
            let mut worst = f64::INFINITY;
            for i in 0..=16 {
                let x = 0.5 * i as f64;
                let g = g_factor(x, 1.0, &quad)?;
                if !(0.0..=1.0).contains(&g) {
                    return Ok((false, format!("g({x}) = {g}")));
                }
                worst = worst.min(g - (1.0 - 1.5 * (-0.5 * x * x).exp()));
            }
            Ok((worst >= 0.0, format!("min margin {worst:e}")))
        }),
        check("crb_limit_small_t", || {
            let (c, x) = e1(5, 1, 2.0)?;
            let v = hcrb_eval(&build_crb_testpoints(&x, 1e-3, &c)?, 1.0, EIG_TOL_REL)?;
            Ok(((v - 1.0).abs() <= 1e-4, format!("{v}")))
        }),
        check("finite_t_vs_pseudoinverse", || {
            let (c, x) = e1(5, 1, 2.0)?;
            let a = hcrb_finite_t(&x, 0.5, &c)?;
            let b = hcrb_eval(&build_hcrb_testpoints(&x, 0.5, &c)?, 1.0, EIG_TOL_REL)?;
            Ok((((a - b) / b).abs() < 1e-8, format!("{a} vs {b}")))
        }),
        check("structured_inverse_worked_example", || {
            let inv = structured_inverse(&StructuredMatrixParams {
                a: 3.0,
                b: 1.0,
                c: 1.0,
                d: 2.0,
                r: 2,
            })?;
            let ok = (inv.a - 3.0 / 7.0).abs() < 1e-14
                && (inv.b + 1.0 / 7.0).abs() < 1e-14
                && (inv.c + 2.0 / 7.0).abs() < 1e-14
                && (inv.d - 5.0 / 7.0).abs() < 1e-14;
            Ok((ok, format!("{inv:?}")))
        }),
        check("bound_ordering", || {
            let (c, x) = e1(5, 1, 1.0)?;
            let lo = hcrb_closed(&x, &c);
            let hi = bb_upper(&x, &c, &quad)?;
            let env = bb_upper_envelope(&x, &c)?;
            let num = bb_upper_numeric(&x, 10, &UnbiasednessGrid::default_for(&x, &c), &c)?;
            let ok = lo <= num + 1e-6 && hi <= env && num <= 5.0 + 1e-12;
            Ok((ok, format!("hcrb {lo:.6} bb_c' {num:.6} bb_c {hi:.6} envelope {env:.6}")))
        }),
        check("partition_sum_collapse", || {
            let cfg = ProblemConfig::new(6, 2, 1.0)?;
            let x = SparseParam::new(vec![1.0, 0.0, -0.5, 0.0, 0.0, 0.0], &cfg)?;
            let mut worst: f64 = 0.0;
            for &y in &[0.0, 0.4, 1.2, 2.5] {
                let a = prob_not_in_top_s(&x, 1, y, &cfg)?;
                let b = prob_not_in_top_s_enumerated(&x, 1, y, &cfg)?;
                worst = worst.max((a - b).abs());
            }
            Ok((worst < 1e-12, format!("max diff {worst:e}")))
        }),
    ]
}
