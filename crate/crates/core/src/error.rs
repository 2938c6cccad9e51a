use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{value} is not invertible modulo {modulus}")]
    NotInvertible { value: i128, modulus: i128 },

    #[error("moduli {0:?} are not pairwise coprime")]
    NotCoprime([i128; 3]),

    #[error("brute-force sum of length {len} exceeds the limit {limit}")]
    BruteForceLimit { len: u64, limit: u64 },

    #[error("modulus family is empty")]
    EmptyQSet,

    #[error("phase-reduction hypothesis fails at index {index}: {reason}")]
    HypothesisFailed { index: usize, reason: String },

    #[error("quadrature did not converge: estimated error {achieved:e} > target {target:e}")]
    Quadrature { achieved: f64, target: f64 },

    #[error("imaginary residue {residue:e} exceeds the symmetry tolerance")]
    SymmetryViolation { residue: f64 },

    #[error("truncation too coarse: tail {tail:e} vs head {head:e}")]
    TruncationTooCoarse { head: f64, tail: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
