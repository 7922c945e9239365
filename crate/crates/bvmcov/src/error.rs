use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (leading minor {index} fails)")]
    NotPositiveDefinite { index: usize },

    #[error("matrix is not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {dev:.3e}")]
    NotSymmetric { i: usize, j: usize, dev: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector length {len} is not a triangular number p(p+1)/2")]
    NotTriangularLength { len: usize },

    #[error("scale matrices do not commute: |psi1*psi2 - psi2*psi1|_max = {dev:.3e}")]
    NonCommutingScales { dev: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.3e}")]
    NotPsd { min_eig: f64 },

    #[error("graph is not decomposable")]
    NotDecomposable,

    #[error("clique {clique:?} has a singular submatrix")]
    SingularClique { clique: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature failed to converge: estimate {estimate:.6e}, error bound {bound:.3e}")]
    QuadratureFailed { estimate: f64, bound: f64 },

    #[error("no feasible perturbation found: {0}")]
    Infeasible(String),

    #[error("sampler degenerate: {0}")]
    DegenerateSampler(String),

    #[error("divergence estimate unreliable: {0}")]
    UnreliableEstimate(String),

    #[error("config error at {location}: {msg}")]
    Config { location: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
