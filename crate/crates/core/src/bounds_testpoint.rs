//! Test-point (Hammersley–Chapman–Robbins) lower bounds.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{ProblemConfig, SparseParam};

/// Default relative eigenvalue cutoff for the Gram pseudoinverse.
pub const EIG_TOL_REL: f64 = 1e-12;

/// Largest admissible `v_i^T v_j / sigma^2` before `exp` gets too close to overflow.
const MAX_EXPONENT: f64 = 700.0;

/// Perturbations `v_i` of a base parameter such that every `x + v_i` is S-sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPointSet {
    base: SparseParam,
    points: Vec<Vec<f64>>,
}

impl TestPointSet {
    pub fn new(base: SparseParam, points: Vec<Vec<f64>>, config: &ProblemConfig) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("a test-point set needs at least one point".into()));
        }
        for v in &points {
            if v.len() != config.n {
                return Err(Error::DimensionMismatch {
                    expected: config.n,
                    got: v.len(),
                });
            }
            if v.iter().all(|&e| e == 0.0) {
                return Err(Error::InvalidArgument("zero test point".into()));
            }
            let shifted: Vec<f64> = base.values().iter().zip(v).map(|(a, b)| a + b).collect();
            SparseParam::new(shifted, config)?;
        }
        Ok(TestPointSet { base, points })
    }

    pub fn base(&self) -> &SparseParam {
        &self.base
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn unit(n: usize, i: usize, t: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = t;
    v
}

fn require_positive(name: &str, t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {t}")))
    }
}

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

/// `{t e_i : i in supp(x)}` on maximal support, `{t e_i : i = 1..N}` otherwise.
pub fn build_crb_testpoints(x: &SparseParam, t: f64, config: &ProblemConfig) -> Result<TestPointSet> {
    require_positive("t", t)?;
    let idx: Vec<usize> = if x.has_max_support(config) {
        x.support().to_vec()
    } else {
        (0..config.n).collect()
    };
    let points = idx.into_iter().map(|i| unit(config.n, i, t)).collect();
    TestPointSet::new(x.clone(), points, config)
}

/// The N points behind the closed-form HCRB: `t e_i` on the support and
/// `t e_i - x_(S) e_(S)` off it, where `x_(S)` is the signed smallest entry.
pub fn build_hcrb_testpoints(x: &SparseParam, t: f64, config: &ProblemConfig) -> Result<TestPointSet> {
    require_max_support(x, config)?;
    require_positive("t", t)?;
    let j = x.xi_index().expect("maximal support is nonempty");
    let xs = x.values()[j];
    let points = (0..config.n)
        .map(|i| {
            let mut v = unit(config.n, i, t);
            if !x.is_on_support(i) {
                v[j] = -xs;
            }
            v
        })
        .collect();
    TestPointSet::new(x.clone(), points, config)
}

/// The enlarged set `V0 ∪ ⋃_k (V_k ∪ W_k)` with
/// `V0 = {α e_l : l ∈ supp}`, `V_k = {α e_l - x_k e_k : l ∉ supp}` and
/// `W_k = {x_k e_l - x_k e_k : l ∉ supp}`; exact duplicates are dropped.
pub fn build_extended_testpoints(x: &SparseParam, alpha: f64, config: &ProblemConfig) -> Result<TestPointSet> {
    require_max_support(x, config)?;
    require_positive("alpha", alpha)?;
    let n = config.n;
    let off: Vec<usize> = (0..n).filter(|&l| !x.is_on_support(l)).collect();
    let mut points: Vec<Vec<f64>> = x.support().iter().map(|&l| unit(n, l, alpha)).collect();
    for &k in x.support() {
        let xk = x.values()[k];
        for &l in &off {
            let mut v = unit(n, l, alpha);
            v[k] = -xk;
            points.push(v);
        }
        for &l in &off {
            let mut v = unit(n, l, xk);
            v[k] = -xk;
            points.push(v);
        }
    }
    let mut unique: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !unique.contains(&p) {
            unique.push(p);
        }
    }
    TestPointSet::new(x.clone(), unique, config)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `J_ij = exp(v_i^T v_j / sigma^2) - 1`.
pub fn gram_matrix_j(tp: &TestPointSet, sigma2: f64) -> Result<DMatrix<f64>> {
    let p = tp.len();
    let pts = tp.points();
    let mut j = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let e = dot(&pts[a], &pts[b]) / sigma2;
            if e > MAX_EXPONENT {
                return Err(Error::ScaleError { exponent: e });
            }
            let v = e.exp_m1();
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Ok(j)
}

/// `tr(V J^† V^T)` over the test points of `tp`.
///
/// `J` is diagonally equilibrated before the eigendecomposition; the trace is
/// unchanged by this (V's rows lie in the range of J) while the cutoff then acts
/// on a matrix whose entries are all of order one.
pub fn hcrb_eval(tp: &TestPointSet, sigma2: f64, eig_tol_rel: f64) -> Result<f64> {
    let j = gram_matrix_j(tp, sigma2)?;
    let p = tp.len();
    let scale: Vec<f64> = (0..p)
        .map(|i| {
            let d = j[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut js = j;
    for a in 0..p {
        for b in 0..p {
            js[(a, b)] *= scale[a] * scale[b];
        }
    }
    let eig = SymmetricEigen::new(js);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if !(lmax > 0.0) {
        return Err(Error::DegenerateGram);
    }
    let cutoff = eig_tol_rel * lmax;

    // Scaled test-point Gram G = D V V^T D, trace(G J_s^†) = Σ_λ>cut (u^T G u)/λ.
    let n = tp.points()[0].len();
    let mut vs = DMatrix::zeros(p, n);
    for a in 0..p {
        for c in 0..n {
            vs[(a, c)] = tp.points()[a][c] * scale[a];
        }
    }
    let mut total = 0.0;
    let mut kept = 0;
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= cutoff {
            continue;
        }
        kept += 1;
        let u = eig.eigenvectors.column(idx);
        let w = vs.transpose() * u;
        total += w.norm_squared() / lam;
    }
    if kept == 0 {
        return Err(Error::DegenerateGram);
    }
    Ok(total.max(0.0))
}

/// Parameters of the (r+1)×(r+1) matrix `[[a, b 1^T], [b 1, (d-c) I + c 1 1^T]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredMatrixParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r: usize,
}

impl StructuredMatrixParams {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        assemble(self.a, self.b, self.c, self.d, self.r)
    }
}

/// Inverse in the same pattern: `a'` top-left, `b'` border, `d'` diagonal, `c'` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredInverse {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl StructuredInverse {
    pub fn to_matrix(&self, r: usize) -> DMatrix<f64> {
        assemble(self.a, self.b, self.c, self.d, r)
    }
}

fn assemble(a: f64, b: f64, c: f64, d: f64, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r + 1, r + 1, |i, j| match (i, j) {
        (0, 0) => a,
        (0, _) | (_, 0) => b,
        _ if i == j => d,
        _ => c,
    })
}

const SINGULAR_REL: f64 = 1e-12;

fn near_zero(v: f64, scale: f64) -> bool {
    v.abs() <= SINGULAR_REL * scale || v == 0.0
}

pub fn structured_inverse(p: &StructuredMatrixParams) -> Result<StructuredInverse> {
    if p.r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    let StructuredMatrixParams { a, b, c, d, r } = *p;
    let rf = r as f64;
    let dc = d - c;
    if near_zero(dc, d.abs().max(c.abs())) {
        return Err(Error::SingularStructure("d - c vanishes".into()));
    }
    let e = d + (rf - 1.0) * c;
    if near_zero(e, d.abs().max((rf - 1.0) * c.abs())) {
        return Err(Error::SingularStructure("d + (r-1)c vanishes".into()));
    }
    let q = rf * b * b - a * d - (rf - 1.0) * a * c;
    let q_scale = (rf * b * b).max((a * d).abs()).max(((rf - 1.0) * a * c).abs());
    if near_zero(q, q_scale) {
        return Err(Error::SingularStructure("q = r b^2 - a d - (r-1) a c vanishes".into()));
    }
    Ok(StructuredInverse {
        a: -e / q,
        b: b / q,
        c: (a * c - b * b) / (dc * q),
        d: ((rf - 1.0) * b * b - (rf - 2.0) * a * c - a * d) / (dc * q),
    })
}

fn finite_t_once(s: usize, r: usize, t: f64, xs: f64, sigma2: f64) -> Result<f64> {
    let t2 = t * t;
    let a = (t2 / sigma2).exp_m1();
    let sf = s as f64;
    if r == 0 {
        return Ok(sf * t2 / a);
    }
    let b = (-t * xs / sigma2).exp_m1();
    let c = (xs * xs / sigma2).exp_m1();
    let d = ((t2 + xs * xs) / sigma2).exp_m1();
    let inv = structured_inverse(&StructuredMatrixParams { a, b, c, d, r })?;
    let rf = r as f64;
    Ok((sf - 1.0) * t2 / a + t2 * inv.a - 2.0 * rf * t * xs * inv.b
        + rf * (rf - 1.0) * xs * xs * inv.c
        + rf * (t2 + xs * xs) * inv.d)
}

/// Closed-form value of `hcrb_eval(build_hcrb_testpoints(x, t))` at finite `t`.
///
/// Retries once at `t (1 + 1e-6)` when the structured inverse is singular.
pub fn hcrb_finite_t(x: &SparseParam, t: f64, config: &ProblemConfig) -> Result<f64> {
    require_max_support(x, config)?;
    require_positive("t", t)?;
    let j = x.xi_index().expect("maximal support is nonempty");
    let xs = x.values()[j];
    let r = config.n - config.s;
    for arg in [(t * t + xs * xs) / config.sigma2, xs * xs / config.sigma2] {
        if arg > MAX_EXPONENT {
            return Err(Error::ScaleError { exponent: arg });
        }
    }
    match finite_t_once(config.s, r, t, xs, config.sigma2) {
        Err(Error::SingularStructure(_)) => finite_t_once(config.s, r, t * (1.0 + 1e-6), xs, config.sigma2),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_param;

    fn cfg(n: usize, s: usize) -> ProblemConfig {
        ProblemConfig::new(n, s, 1.0).unwrap()
    }

    #[test]
    fn crb_points_both_branches() {
        let c = cfg(5, 1);
        let x = validate_param(&[2.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        let tp = build_crb_testpoints(&x, 0.1, &c).unwrap();
        assert_eq!(tp.points(), &[vec![0.1, 0.0, 0.0, 0.0, 0.0]]);
        let z = validate_param(&[0.0; 5], &c).unwrap();
        assert_eq!(build_crb_testpoints(&z, 0.1, &c).unwrap().len(), 5);
    }

    #[test]
    fn hcrb_points_hand_example() {
        let c = cfg(3, 1);
        let x = validate_param(&[2.0, 0.0, 0.0], &c).unwrap();
        let tp = build_hcrb_testpoints(&x, 0.1, &c).unwrap();
        assert_eq!(
            tp.points(),
            &[vec![0.1, 0.0, 0.0], vec![-2.0, 0.1, 0.0], vec![-2.0, 0.0, 0.1]]
        );
    }

    #[test]
    fn hcrb_points_signed_entry() {
        let c = cfg(3, 1);
        let x = validate_param(&[0.0, -1.5, 0.0], &c).unwrap();
        let tp = build_hcrb_testpoints(&x, 0.2, &c).unwrap();
        assert_eq!(tp.points()[0], vec![0.2, 1.5, 0.0]);
    }

    #[test]
    fn extended_set_size() {
        let c = cfg(5, 1);
        let x = validate_param(&[3.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        assert_eq!(build_extended_testpoints(&x, 0.02, &c).unwrap().len(), 9);
        // α = x_k makes V_k and W_k coincide.
        assert_eq!(build_extended_testpoints(&x, 3.0, &c).unwrap().len(), 5);
        assert!(matches!(build_extended_testpoints(&x, 0.0, &c), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gram_entries() {
        let c = cfg(2, 2);
        let x = validate_param(&[0.0, 0.0], &c).unwrap();
        let tp = TestPointSet::new(x, vec![vec![1.0, 0.0], vec![0.0, 1.0]], &c).unwrap();
        let j = gram_matrix_j(&tp, 1.0).unwrap();
        assert!((j[(0, 0)] - (1f64.exp() - 1.0)).abs() < 1e-15);
        assert_eq!(j[(0, 1)], 0.0);
        let big = TestPointSet::new(tp.base().clone(), vec![vec![30.0, 0.0]], &c).unwrap();
        assert!(matches!(gram_matrix_j(&big, 1.0), Err(Error::ScaleError { .. })));
    }

    #[test]
    fn structured_worked_example() {
        let p = StructuredMatrixParams { a: 3.0, b: 1.0, c: 1.0, d: 2.0, r: 2 };
        let inv = structured_inverse(&p).unwrap();
        let want = [3.0 / 7.0, -1.0 / 7.0, -2.0 / 7.0, 5.0 / 7.0];
        for (g, w) in [inv.a, inv.b, inv.c, inv.d].iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        let prod = p.to_matrix() * inv.to_matrix(2);
        assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn structured_singular_q() {
        let p = StructuredMatrixParams { a: 2.0, b: 1.0, c: 0.0, d: 1.0, r: 2 };
        assert!(matches!(structured_inverse(&p), Err(Error::SingularStructure(_))));
    }

    #[test]
    fn structured_r1() {
        let p = StructuredMatrixParams { a: 2.0, b: 0.5, c: 7.0, d: 3.0, r: 1 };
        let inv = structured_inverse(&p).unwrap();
        let dense = p.to_matrix().try_inverse().unwrap();
        assert!((inv.to_matrix(1) - dense).amax() < 1e-14);
    }

    #[test]
    fn finite_t_matches_eval_example() {
        let c = cfg(5, 1);
        let x = validate_param(&[2.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        let tp = build_hcrb_testpoints(&x, 0.5, &c).unwrap();
        let num = hcrb_eval(&tp, 1.0, EIG_TOL_REL).unwrap();
        let ana = hcrb_finite_t(&x, 0.5, &c).unwrap();
        assert!(((num - ana) / ana).abs() < 1e-8, "{num} vs {ana}");
    }

    #[test]
    fn crb_points_below_crb_at_finite_t() {
        let c = cfg(5, 1);
        let x = validate_param(&[2.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        for t in [0.1, 1.0, 2.0] {
            let v = hcrb_eval(&build_crb_testpoints(&x, t, &c).unwrap(), 1.0, EIG_TOL_REL).unwrap();
            let want = t * t / (t * t as f64).exp_m1();
            assert!((v - want).abs() < 1e-12);
            assert!(v < 1.0);
        }
    }
}
