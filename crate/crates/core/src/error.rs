use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value while evaluating {what}")]
    NonFinite { what: &'static str },

    #[error("segment index {index} out of range for a robot with {count} segment(s)")]
    SegmentOutOfRange { index: usize, count: usize },

    #[error("arclength coordinate {s} outside [0, 1]")]
    ArclengthOutOfRange { s: f64 },

    #[error("actuation pattern does not fit the robot: {reason}")]
    PatternMismatch { reason: String },

    #[error("inertia matrix is numerically singular")]
    SingularInertia,

    #[error("configuration-space stiffness is singular at the equilibrium")]
    SingularStiffness,

    #[error(
        "equilibrium solver did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: DVector<f64>,
    },

    #[error("configuration is not an equilibrium (residual {residual:e})")]
    NotAnEquilibrium { residual: f64 },

    #[error("equilibrium is not attainable with the available actuation (residual {residual:e})")]
    UnattainableEquilibrium { residual: f64 },

    #[error("matrix is rank deficient; singular values {singular_values:?}")]
    RankDeficient { singular_values: Vec<f64> },

    #[error("the controller requires a fully actuated robot (n = {dof}, m = {inputs})")]
    NotFullyActuated { dof: usize, inputs: usize },

    #[error("trace length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
