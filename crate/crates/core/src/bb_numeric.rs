//! Numerical upper bound: the off-support correction term is restricted to a
//! piecewise-constant function on a grid around `x` and the resulting
//! equality-constrained quadratic program is solved exactly.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::model::{ProblemConfig, SparseParam};
use crate::special::{gaussian_first_moment, std_normal_interval};

/// Side of the gridded hypercube in units of sigma.
pub const GRID_SPAN_SIGMAS: f64 = 10.0;

/// Identifier of the default constraint grid, recorded in output metadata.
pub const DEFAULT_GRID_ID: &str = "theta-grid-v1:{0,+-1,+-2,+-3}sigma+supp";

/// Piecewise-constant correction for component `k`, living on the active
/// coordinates `{k} ∪ supp(x)` and constant in every other coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCorrection {
    pub k: usize,
    pub active_dims: Vec<usize>,
    pub q: usize,
    pub delta: f64,
    /// `x` restricted to `active_dims` (zero at `k`).
    pub center: Vec<f64>,
    /// Row-major over `active_dims`, first active dimension slowest.
    pub coefficients: Vec<f64>,
}

impl PiecewiseCorrection {
    pub fn n_cells(&self) -> usize {
        self.coefficients.len()
    }

    /// Position of `k` inside `active_dims`.
    pub fn k_pos(&self) -> usize {
        self.active_dims.iter().position(|&d| d == self.k).expect("k is active")
    }

    /// Cell edges along active dimension `pos`.
    pub fn edges(&self, pos: usize) -> Vec<f64> {
        let lo = self.center[pos] - 0.5 * self.delta * self.q as f64;
        (0..=self.q).map(|i| lo + self.delta * i as f64).collect()
    }

    /// Value of the correction at a full observation vector `y`.
    pub fn evaluate(&self, y: &[f64]) -> f64 {
        let mut idx = 0usize;
        for (pos, &d) in self.active_dims.iter().enumerate() {
            let lo = self.center[pos] - 0.5 * self.delta * self.q as f64;
            let u = ((y[d] - lo) / self.delta).floor();
            if !(u >= 0.0 && u < self.q as f64) {
                return 0.0;
            }
            idx = idx * self.q + u as usize;
        }
        self.coefficients[idx]
    }
}

/// Parameter restrictions `theta` (over the active coordinates) at which
/// unbiasedness of the correction is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessGrid {
    thetas: Vec<Vec<f64>>,
}

impl UnbiasednessGrid {
    /// Every theta must have at least one zero coordinate and a common length.
    pub fn new(thetas: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = thetas.first() {
            let len = first.len();
            for t in &thetas {
                if t.len() != len {
                    return Err(Error::DimensionMismatch {
                        expected: len,
                        got: t.len(),
                    });
                }
                if !t.iter().any(|&v| v == 0.0) {
                    return Err(Error::InvalidArgument(
                        "every constraint point needs a zero coordinate".into(),
                    ));
                }
            }
        }
        Ok(UnbiasednessGrid { thetas })
    }

    /// Coordinates drawn from `{0, ±σ, ±2σ, ±3σ} ∪ {x_l : l ∈ supp}`, keeping the
    /// points that have at least one zero.
    pub fn default_for(x: &SparseParam, config: &ProblemConfig) -> Self {
        let sigma = config.sigma();
        let mut vals: Vec<f64> = (-3..=3).map(|i| i as f64 * sigma).collect();
        vals.extend(x.support().iter().map(|&l| x.values()[l]));
        vals.sort_by(|a, b| a.total_cmp(b));
        vals.dedup();
        let dims = x.nnz() + 1;
        let mut thetas = Vec::new();
        let mut idx = vec![0usize; dims];
        'outer: loop {
            let theta: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
            if theta.iter().any(|&v| v == 0.0) {
                thetas.push(theta);
            }
            for d in (0..dims).rev() {
                idx[d] += 1;
                if idx[d] < vals.len() {
                    continue 'outer;
                }
                idx[d] = 0;
            }
            break;
        }
        UnbiasednessGrid { thetas }
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// Zero-initialised grid for component `k` with `q` cells per active dimension.
pub fn build_grid(x: &SparseParam, k: usize, q: usize, config: &ProblemConfig) -> Result<PiecewiseCorrection> {
    if !x.has_max_support(config) {
        return Err(Error::MaxSupportRequired {
            nonzeros: x.nnz(),
            s: config.s,
        });
    }
    if k >= config.n {
        return Err(Error::InvalidArgument(format!("component index {k} out of range")));
    }
    if x.is_on_support(k) {
        return Err(Error::IndexOnSupport { k });
    }
    if q < 2 {
        return Err(Error::InvalidArgument(format!("need Q >= 2, got {q}")));
    }
    let mut active_dims = x.support().to_vec();
    active_dims.push(k);
    active_dims.sort_unstable();
    let center = active_dims.iter().map(|&d| x.values()[d]).collect();
    let n_cells = q
        .checked_pow(active_dims.len() as u32)
        .filter(|&c| c <= 50_000_000)
        .ok_or_else(|| Error::InvalidArgument(format!("grid with Q = {q} in {} dimensions is too large", active_dims.len())))?;
    Ok(PiecewiseCorrection {
        k,
        active_dims,
        q,
        delta: GRID_SPAN_SIGMAS * config.sigma() / q as f64,
        center,
        coefficients: vec![0.0; n_cells],
    })
}

/// Per-cell Gaussian box probability and first moment of `y_k` at a given theta.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMoments {
    pub prob: Vec<f64>,
    pub first_moment_k: Vec<f64>,
}

fn kron(left: &[f64], right: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(left.len() * right.len());
    for &a in left {
        out.extend(right.iter().map(|&b| a * b));
    }
    out
}

pub fn cell_gaussian_moments(pc: &PiecewiseCorrection, theta: &[f64], sigma2: f64) -> Result<CellMoments> {
    if theta.len() != pc.active_dims.len() {
        return Err(Error::DimensionMismatch {
            expected: pc.active_dims.len(),
            got: theta.len(),
        });
    }
    let sigma = sigma2.sqrt();
    let kpos = pc.k_pos();
    let mut prob = vec![1.0];
    let mut m1 = vec![1.0];
    for (pos, &th) in theta.iter().enumerate() {
        let e = pc.edges(pos);
        let p: Vec<f64> = e
            .windows(2)
            .map(|w| std_normal_interval((w[0] - th) / sigma, (w[1] - th) / sigma))
            .collect();
        if pos == kpos {
            let m: Vec<f64> = e.windows(2).map(|w| gaussian_first_moment(w[0], w[1], th, sigma)).collect();
            m1 = kron(&m1, &m);
        } else {
            m1 = kron(&m1, &p);
        }
        prob = kron(&prob, &p);
    }
    Ok(CellMoments {
        prob,
        first_moment_k: m1,
    })
}

/// Quadratic program `min baseline + Σ H_j c_j² + 2 Σ b_j c_j` subject to `A c = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentQp {
    pub baseline: f64,
    pub diag_h: Vec<f64>,
    pub lin_b: Vec<f64>,
    /// One row per constraint point.
    pub constraints: DMatrix<f64>,
}

impl ComponentQp {
    pub fn objective(&self, c: &[f64]) -> f64 {
        self.baseline
            + self
                .diag_h
                .iter()
                .zip(&self.lin_b)
                .zip(c)
                .map(|((h, b), c)| h * c * c + 2.0 * b * c)
                .sum::<f64>()
    }
}

pub fn assemble_component_qp(
    pc: &PiecewiseCorrection,
    ug: &UnbiasednessGrid,
    x: &SparseParam,
    sigma2: f64,
) -> Result<ComponentQp> {
    let here: Vec<f64> = pc.active_dims.iter().map(|&d| x.values()[d]).collect();
    let at_x = cell_gaussian_moments(pc, &here, sigma2)?;
    let n = pc.n_cells();
    let mut a = DMatrix::zeros(ug.len(), n);
    for (row, theta) in ug.thetas().iter().enumerate() {
        let m = cell_gaussian_moments(pc, theta, sigma2)?;
        for (j, p) in m.prob.iter().enumerate() {
            a[(row, j)] = *p;
        }
    }
    Ok(ComponentQp {
        baseline: sigma2,
        diag_h: at_x.prob,
        lin_b: at_x.first_moment_k,
        constraints: a,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    /// `max |A c|` with the original constraint rows.
    pub residual: f64,
}

/// Default diagonal regularisation relative to `max H`.
pub const DEFAULT_REG_REL: f64 = 1e-12;

const PARALLEL_COS: f64 = 1.0 - 1e-12;
const RANK_TOL_REL: f64 = 1e-13;
const FEAS_TOL: f64 = 1e-8;

/// Rows of `a` with zero rows and near-parallel duplicates removed.
fn independent_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let norms: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).norm()).collect();
    for i in 0..a.nrows() {
        if norms[i] == 0.0 {
            continue;
        }
        let dup = kept.iter().any(|&j| {
            let cos = a.row(i).dot(&a.row(j)) / (norms[i] * norms[j]);
            cos > PARALLEL_COS
        });
        if !dup {
            kept.push(i);
        }
    }
    kept
}

/// Solves the KKT system of the component QP.
///
/// With `D = diag(H) + reg` the substitution `c = D^{-1/2} z` turns the problem
/// into a Euclidean projection: `z = -(I - P) D^{-1/2} b`, where `P` projects
/// onto the row space of `A D^{-1/2}`. The projector comes from an SVD with a
/// relative singular-value cutoff, which absorbs redundant constraints.
pub fn solve_component_qp(qp: &ComponentQp, reg: f64) -> Result<QpSolution> {
    let n = qp.diag_h.len();
    if qp.lin_b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: qp.lin_b.len(),
        });
    }
    if qp.constraints.nrows() > 0 && qp.constraints.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: qp.constraints.ncols(),
        });
    }
    if !(reg >= 0.0) {
        return Err(Error::InvalidArgument("regularisation must be non-negative".into()));
    }
    let dinv_sqrt: Vec<f64> = qp
        .diag_h
        .iter()
        .map(|&h| {
            let d = h + reg;
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut z = DVector::from_fn(n, |j, _| -qp.lin_b[j] * dinv_sqrt[j]);

    let rows = independent_rows(&qp.constraints);
    if !rows.is_empty() {
        let at = DMatrix::from_fn(rows.len(), n, |i, j| qp.constraints[(rows[i], j)] * dinv_sqrt[j]);
        let svd = SVD::new(at, false, true);
        let vt = svd.v_t.as_ref().ok_or_else(|| Error::NumericalFailure("SVD did not return V".into()))?;
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        for (i, &sv) in svd.singular_values.iter().enumerate() {
            if sv > RANK_TOL_REL * smax {
                let v = vt.row(i).transpose();
                let proj = v.dot(&z);
                z -= v * proj;
            }
        }
    }
    let coefficients: Vec<f64> = (0..n).map(|j| z[j] * dinv_sqrt[j]).collect();
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NumericalFailure("non-finite QP solution".into()));
    }
    let residual = if qp.constraints.nrows() > 0 {
        (&qp.constraints * DVector::from_column_slice(&coefficients)).amax()
    } else {
        0.0
    };
    let cmax = coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if residual > FEAS_TOL * cmax.max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "constraint residual {residual:e} exceeds tolerance"
        )));
    }
    let objective = qp.objective(&coefficients);
    Ok(QpSolution {
        coefficients,
        objective,
        residual,
    })
}

/// Solved correction and QP for the first off-support component.
pub fn solve_correction(
    x: &SparseParam,
    q: usize,
    ug: &UnbiasednessGrid,
    config: &ProblemConfig,
) -> Result<(PiecewiseCorrection, QpSolution)> {
    let k = (0..config.n)
        .find(|&k| !x.is_on_support(k))
        .ok_or(Error::ScopeError { n: config.n })?;
    let mut pc = build_grid(x, k, q, config)?;
    let qp = assemble_component_qp(&pc, ug, x, config.sigma2)?;
    let hmax = qp.diag_h.iter().cloned().fold(0.0f64, f64::max);
    let sol = solve_component_qp(&qp, DEFAULT_REG_REL * hmax)?;
    pc.coefficients.clone_from(&sol.coefficients);
    Ok((pc, sol))
}

/// `S sigma^2 + (N - S) * (per-component optimum)`.
///
/// Every off-support component sees the same QP data, so one solve suffices.
pub fn bb_upper_numeric(x: &SparseParam, q: usize, ug: &UnbiasednessGrid, config: &ProblemConfig) -> Result<f64> {
    if !x.has_max_support(config) {
        return Err(Error::MaxSupportRequired {
            nonzeros: x.nnz(),
            s: config.s,
        });
    }
    let on = config.s as f64 * config.sigma2;
    if config.s == config.n {
        return Ok(on);
    }
    let (_, sol) = solve_correction(x, q, ug, config)?;
    Ok(on + (config.n - config.s) as f64 * sol.objective)
}
