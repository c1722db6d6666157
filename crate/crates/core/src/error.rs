use thiserror::Error;

/// Failures raised by the engine, the source model and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} out of range: {value} (expected {expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("unknown mode label `{0}`")]
    UnknownMode(String),
    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),
    #[error("operation needs two distinct modes, got `{0}` twice")]
    IdenticalModes(String),
    #[error("mode `{0}` is not in the vacuum state")]
    NotVacuum(String),
    #[error("invalid register: {0}")]
    InvalidRegister(String),
    #[error("undefined estimate: {0}")]
    Undefined(String),
    #[error("physically infeasible: {0}")]
    Infeasible(String),
    #[error("malformed distribution: {0}")]
    MalformedDistribution(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Checks `lo <= value <= hi`, rejecting NaN.
pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    expected: &'static str,
) -> Result<()> {
    if value.is_nan() || value < lo || value > hi {
        return Err(Error::OutOfRange {
            name,
            value,
            expected,
        });
    }
    Ok(())
}
