//! Shared data model and the interface every soft robot model implements.
//!
//! A model exposes the backbone kinematics `x(s) = h(s, q)`, its Jacobian and
//! the terms of the Lagrangian dynamics
//!
//! ```text
//! M(q) q̈ + C(q, q̇) q̇ + G(q) + D(q) q̇ + K(q) = A(q) τ
//! ```
//!
//! Every evaluator is a pure function of its arguments, so models can be shared
//! freely between threads.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Position and orientation of a backbone frame. `theta` is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarPose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn to_dvector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.x, self.y, self.theta])
    }

    /// Pose of `local` expressed in the frame `self`.
    pub fn compose(self, local: PlanarPose) -> PlanarPose {
        let (s, c) = self.theta.sin_cos();
        PlanarPose {
            x: self.x + c * local.x - s * local.y,
            y: self.y + s * local.x + c * local.y,
            theta: self.theta + local.theta,
        }
    }
}

/// A point on the backbone: a segment index and the normalized arclength
/// inside that segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackbonePoint {
    pub segment: usize,
    pub s: f64,
}

impl BackbonePoint {
    pub fn new(segment: usize, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::ArclengthOutOfRange { s });
        }
        Ok(Self { segment, s })
    }

    /// Tip of segment `segment`.
    pub const fn tip_of(segment: usize) -> Self {
        Self { segment, s: 1.0 }
    }
}

/// Generalized coordinates and velocities of the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl RobotState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "configuration",
                expected: 1,
                found: 0,
            });
        }
        check_dim("velocity", q.len(), qdot.len())?;
        if !q.iter().chain(qdot.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "robot state",
            });
        }
        Ok(Self { q, qdot })
    }

    pub fn at_rest(q: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::new(q, DVector::zeros(n))
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

/// Elastic and gravitational potential energies [J].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PotentialEnergy {
    pub elastic: f64,
    pub gravity: f64,
}

impl PotentialEnergy {
    pub fn total(&self) -> f64 {
        self.elastic + self.gravity
    }
}

/// The dynamics terms evaluated at one state.
///
/// `coriolis` is the matrix factorization, `coriolis * qdot` is the force,
/// and it satisfies `q̇ᵀ(Ṁ − 2C)q̇ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
    pub elastic: DVector<f64>,
    pub damping: DMatrix<f64>,
    pub actuation: DMatrix<f64>,
}

impl DynamicsTerms {
    /// Everything except the inertial term: `C q̇ + G + K + D q̇`.
    pub fn bias_force(&self, qdot: &DVector<f64>) -> DVector<f64> {
        &self.coriolis * qdot + &self.gravity + &self.elastic + &self.damping * qdot
    }

    fn all_finite(&self) -> bool {
        self.mass.iter().all(|v| v.is_finite())
            && self.coriolis.iter().all(|v| v.is_finite())
            && self.gravity.iter().all(|v| v.is_finite())
            && self.elastic.iter().all(|v| v.is_finite())
            && self.damping.iter().all(|v| v.is_finite())
            && self.actuation.iter().all(|v| v.is_finite())
    }
}

/// A planar soft robot model.
///
/// Configuration vectors passed to the evaluators must have length
/// [`SoftRobot::dof`]; the checked entry points in the other modules verify
/// this before calling in.
pub trait SoftRobot: Send + Sync {
    /// Number of generalized coordinates `n`.
    fn dof(&self) -> usize;

    /// Number of actuator inputs `m`.
    fn inputs(&self) -> usize;

    /// Number of addressable backbone segments.
    fn segment_count(&self) -> usize;

    fn pose(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<PlanarPose>;

    /// `∂h/∂q`, a 3×n matrix with rows (x, y, θ).
    fn jacobian(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;

    fn coriolis_matrix(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64>;

    fn gravity_force(&self, q: &DVector<f64>) -> DVector<f64>;

    fn elastic_force(&self, q: &DVector<f64>) -> DVector<f64>;

    fn damping_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Input field `A(q)`, n×m.
    fn actuation_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;

    fn potential_energy(&self, q: &DVector<f64>) -> PotentialEnergy;

    /// Sum of elastic and gravitational forces, the static load `K + G`.
    fn potential_force(&self, q: &DVector<f64>) -> DVector<f64> {
        self.elastic_force(q) + self.gravity_force(q)
    }

    fn tip(&self) -> BackbonePoint {
        BackbonePoint::tip_of(self.segment_count() - 1)
    }

    fn kinetic_energy(&self, state: &RobotState) -> f64 {
        0.5 * state.qdot.dot(&(self.mass_matrix(&state.q) * &state.qdot))
    }

    fn terms(&self, state: &RobotState) -> Result<DynamicsTerms> {
        check_dim("state", self.dof(), state.dof())?;
        let terms = DynamicsTerms {
            mass: self.mass_matrix(&state.q),
            coriolis: self.coriolis_matrix(&state.q, &state.qdot),
            gravity: self.gravity_force(&state.q),
            elastic: self.elastic_force(&state.q),
            damping: self.damping_matrix(&state.q),
            actuation: self.actuation_matrix(&state.q),
        };
        if terms.all_finite() {
            Ok(terms)
        } else {
            Err(Error::NonFinite {
                what: "dynamics terms",
            })
        }
    }
}

pub(crate) fn check_configuration(model: &dyn SoftRobot, q: &DVector<f64>) -> Result<()> {
    check_dim("configuration", model.dof(), q.len())?;
    if q.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "configuration",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_rotates_local_offset() {
        let base = PlanarPose::new(1.0, 0.0, std::f64::consts::FRAC_PI_2);
        let p = base.compose(PlanarPose::new(1.0, 0.0, 0.5));
        assert!((p.x - 1.0).abs() < 1e-15);
        assert!((p.y - 1.0).abs() < 1e-15);
        assert_eq!(p.theta, std::f64::consts::FRAC_PI_2 + 0.5);
    }

    #[test]
    fn state_rejects_mismatched_or_nonfinite() {
        assert!(RobotState::new(DVector::from_vec(vec![0.0, 1.0]), DVector::zeros(1)).is_err());
        assert!(RobotState::new(DVector::from_vec(vec![f64::NAN]), DVector::zeros(1)).is_err());
        assert!(RobotState::new(DVector::zeros(0), DVector::zeros(0)).is_err());
    }

    #[test]
    fn backbone_point_range() {
        assert!(BackbonePoint::new(0, 1.0).is_ok());
        assert!(BackbonePoint::new(0, -0.1).is_err());
        assert!(BackbonePoint::new(0, 1.5).is_err());
    }
}
