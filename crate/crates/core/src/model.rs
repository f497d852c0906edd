//! The sparse signal-in-noise model `y = x + n`, `n ~ N(0, sigma^2 I)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NormalStream;

/// Dimensions and noise level of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: usize,
    pub s: usize,
    pub sigma2: f64,
}

impl ProblemConfig {
    pub fn new(n: usize, s: usize, sigma2: f64) -> Result<Self> {
        let c = ProblemConfig { n, s, sigma2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.s > self.n {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= S <= N, got S = {}, N = {}",
                self.s, self.n
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma^2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// A validated parameter vector with cached support and smallest nonzero entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseParam {
    values: Vec<f64>,
    support: Vec<usize>,
    xi_index: Option<usize>,
    snr: Option<f64>,
}

impl SparseParam {
    pub fn new(values: Vec<f64>, config: &ProblemConfig) -> Result<Self> {
        config.validate()?;
        if values.len() != config.n {
            return Err(Error::DimensionMismatch {
                expected: config.n,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameter entries must be finite".into()));
        }
        let support: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
        if support.len() > config.s {
            return Err(Error::SparsityViolation {
                nonzeros: support.len(),
                s: config.s,
            });
        }
        // Smallest magnitude on the support, ties to the lowest index.
        let mut xi_index: Option<usize> = None;
        for &i in &support {
            match xi_index {
                Some(j) if values[i].abs() >= values[j].abs() => {}
                _ => xi_index = Some(i),
            }
        }
        let snr = xi_index.map(|i| values[i] * values[i] / config.sigma2);
        Ok(SparseParam {
            values,
            support,
            xi_index,
            snr,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    /// Index of the smallest-magnitude nonzero entry (lowest index on ties).
    pub fn xi_index(&self) -> Option<usize> {
        self.xi_index
    }

    /// Smallest nonzero magnitude.
    pub fn xi(&self) -> Option<f64> {
        self.xi_index.map(|i| self.values[i].abs())
    }

    /// `xi^2 / sigma^2`.
    pub fn snr(&self) -> Option<f64> {
        self.snr
    }

    pub fn snr_db(&self) -> Option<f64> {
        self.snr.map(|r| 10.0 * r.log10())
    }

    pub fn has_max_support(&self, config: &ProblemConfig) -> bool {
        self.support.len() == config.s
    }

    pub fn is_on_support(&self, k: usize) -> bool {
        self.values.get(k).is_some_and(|v| *v != 0.0)
    }
}

/// Checks `x` against the model and returns the validated parameter.
pub fn validate_param(x: &[f64], config: &ProblemConfig) -> Result<SparseParam> {
    SparseParam::new(x.to_vec(), config)
}

/// Indices of the `s` largest magnitudes of `y`, lowest index winning ties.
pub(crate) fn top_s_indices(y: &[f64], s: usize, order: &mut Vec<usize>) {
    order.clear();
    order.extend(0..y.len());
    let key = |a: &usize, b: &usize| y[*b].abs().total_cmp(&y[*a].abs()).then(a.cmp(b));
    if s < y.len() {
        order.select_nth_unstable_by(s, key);
        order.truncate(s);
    }
}

/// Keeps the `s` largest-magnitude entries of `y` and zeroes the rest.
pub fn hard_sparsify(y: &[f64], s: usize) -> Result<Vec<f64>> {
    if s == 0 || s > y.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= S <= N, got S = {s}, N = {}",
            y.len()
        )));
    }
    let mut order = Vec::with_capacity(y.len());
    let mut out = vec![0.0; y.len()];
    top_s_indices(y, s, &mut order);
    for &i in &order {
        out[i] = y[i];
    }
    Ok(out)
}

/// Reduces `z = A x + n` with orthonormal columns to the identity model via `A^T z`.
pub fn reduce_orthonormal_model(a: &DMatrix<f64>, z: &[f64], tol: f64) -> Result<Vec<f64>> {
    if z.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: z.len(),
        });
    }
    let gram = a.transpose() * a;
    let mut dev: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    if dev > tol {
        return Err(Error::NotOrthonormal { max_deviation: dev });
    }
    let zv = nalgebra::DVector::from_column_slice(z);
    Ok((a.transpose() * zv).iter().copied().collect())
}

/// One noisy observation of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSample {
    pub y: Vec<f64>,
}

pub fn sample_observation(x: &SparseParam, config: &ProblemConfig, rng: &mut NormalStream) -> GaussianSample {
    let sigma = config.sigma();
    let y = x.values().iter().map(|&xi| xi + sigma * rng.standard_normal()).collect();
    GaussianSample { y }
}
