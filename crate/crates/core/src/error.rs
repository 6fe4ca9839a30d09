use crate::operator::Factor;

/// Errors raised by the numerical kernels and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("Dg(U) cannot reach rank m: m = {m} exceeds d*p = {dp}")]
    RankImpossible { m: usize, dp: usize },

    #[error("constraint Jacobian is rank deficient at U (sigma_min = {sigma_min:e})")]
    RankDeficientConstraints { sigma_min: f64 },

    #[error("iterate diverged at step {iter}")]
    Diverged { iter: usize },

    #[error("partial-oracle initialization requires an SDP solution")]
    MissingOracle,

    #[error("matrix is not positive semidefinite (lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e})")]
    NotPsd { lambda_min: f64, lambda_max: f64 },

    #[error("Gauss-Newton projection stalled with residual {residual:e}")]
    ProjectionFailed { best: Box<Factor>, residual: f64 },

    #[error("I/O error")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::InvalidDimension(format!(
            "{what}: expected {}x{}, got {}x{}",
            want.0, want.1, got.0, got.1
        )));
    }
    Ok(())
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidDimension(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}
