//! Lumped rigid-link approximation of a constant-curvature segment.
//!
//! A grounded proximal link of length `L/2` and a revolute joint at its end
//! carrying the distal link (length `L/2`, mass `m/2`, uniform). The joint
//! angle corresponds to the CC tip angle. With a parallel elastic actuator
//! (R-PEA) the joint also carries the spring `k̄ q` and damper `d̄ q̇`; without
//! it (R) the joint is free.

use nalgebra::{DMatrix, DVector};

use crate::cc::{Gravity, SegmentParams};
use crate::error::{Error, Result};
use crate::model::{
    BackbonePoint, DynamicsTerms, PlanarPose, PotentialEnergy, RobotState, SoftRobot,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedRigid {
    pub params: SegmentParams,
    pub gravity: Gravity,
    pub parallel_elastic: bool,
}

impl LumpedRigid {
    pub fn new(params: SegmentParams, gravity: Gravity, parallel_elastic: bool) -> Result<Self> {
        params.validate()?;
        Gravity::new(gravity.g, gravity.phi)?;
        Ok(Self {
            params,
            gravity,
            parallel_elastic,
        })
    }

    /// Constant joint inertia `(m/2)(L/2)²/3 = mL²/24`.
    pub fn inertia(&self) -> f64 {
        self.params.mass * self.params.length.powi(2) / 24.0
    }

    fn check_point(point: BackbonePoint) -> Result<()> {
        if point.segment != 0 {
            return Err(Error::SegmentOutOfRange {
                index: point.segment,
                count: 1,
            });
        }
        if !(0.0..=1.0).contains(&point.s) {
            return Err(Error::ArclengthOutOfRange { s: point.s });
        }
        Ok(())
    }
}

/// Dynamics terms of the lumped model; `with_spring` selects R-PEA over R.
pub fn lumped_rigid_terms(
    state: &RobotState,
    params: &SegmentParams,
    gravity: &Gravity,
    with_spring: bool,
) -> Result<DynamicsTerms> {
    LumpedRigid::new(*params, *gravity, with_spring)?.terms(state)
}

impl SoftRobot for LumpedRigid {
    fn dof(&self) -> usize {
        1
    }

    fn inputs(&self) -> usize {
        1
    }

    fn segment_count(&self) -> usize {
        1
    }

    fn pose(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<PlanarPose> {
        Self::check_point(point)?;
        let l = self.params.length;
        if point.s <= 0.5 {
            return Ok(PlanarPose::new(point.s * l, 0.0, 0.0));
        }
        let r = (point.s - 0.5) * l;
        let (sq, cq) = q[0].sin_cos();
        Ok(PlanarPose::new(0.5 * l + r * cq, r * sq, q[0]))
    }

    fn jacobian(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        Self::check_point(point)?;
        if point.s <= 0.5 {
            return Ok(DMatrix::zeros(3, 1));
        }
        let r = (point.s - 0.5) * self.params.length;
        let (sq, cq) = q[0].sin_cos();
        Ok(DMatrix::from_column_slice(3, 1, &[-r * sq, r * cq, 1.0]))
    }

    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.inertia())
    }

    fn coriolis_matrix(&self, _q: &DVector<f64>, _qdot: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn gravity_force(&self, q: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let scale = p.mass * self.gravity.g * p.length / 8.0;
        DVector::from_element(1, scale * (q[0] - self.gravity.phi).sin())
    }

    fn elastic_force(&self, q: &DVector<f64>) -> DVector<f64> {
        let k = if self.parallel_elastic {
            self.params.stiffness
        } else {
            0.0
        };
        DVector::from_element(1, k * q[0])
    }

    fn damping_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        let d = if self.parallel_elastic {
            self.params.damping
        } else {
            0.0
        };
        DMatrix::from_element(1, 1, d)
    }

    fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn potential_energy(&self, q: &DVector<f64>) -> PotentialEnergy {
        let p = &self.params;
        let k = if self.parallel_elastic {
            p.stiffness
        } else {
            0.0
        };
        let phi = self.gravity.phi;
        PotentialEnergy {
            elastic: 0.5 * k * q[0] * q[0],
            gravity: p.mass * self.gravity.g * p.length / 8.0 * (phi.cos() - (q[0] - phi).cos()),
        }
    }
}
