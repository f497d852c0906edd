use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sparsity violation: {nonzeros} nonzero entries exceed S = {s}")]
    SparsityViolation { nonzeros: usize, s: usize },
    #[error("matrix does not have orthonormal columns (max |A^T A - I| = {max_deviation:e})")]
    NotOrthonormal { max_deviation: f64 },
    #[error("parameter must have maximal support: ||x||_0 = {nonzeros}, S = {s}")]
    MaxSupportRequired { nonzeros: usize, s: usize },
    #[error("component index {k} lies on the support of x")]
    IndexOnSupport { k: usize },
    #[error("operation requires S < N (got S = N = {n})")]
    ScopeError { n: usize },
    #[error("dimension guard: N = {n} exceeds the supported maximum {max}")]
    DimensionGuard { n: usize, max: usize },
    #[error("quadrature failed: error estimate {error_estimate:e} above tolerance after {subdivisions} subdivisions")]
    QuadratureFailure {
        error_estimate: f64,
        subdivisions: usize,
    },
    #[error("test points too large relative to sigma: v_i^T v_j / sigma^2 = {exponent} > 700")]
    ScaleError { exponent: f64 },
    #[error("Gram matrix is numerically zero (all eigenvalues below cutoff)")]
    DegenerateGram,
    #[error("structured matrix is singular: {0}")]
    SingularStructure(String),
    #[error("alpha is not positive ({0:e})")]
    DegenerateAlpha(f64),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

impl Error {
    /// True for failures of a numerical routine on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::QuadratureFailure { .. }
                | Error::ScaleError { .. }
                | Error::DegenerateGram
                | Error::SingularStructure(_)
                | Error::DegenerateAlpha(_)
                | Error::NumericalFailure(_)
        )
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}
