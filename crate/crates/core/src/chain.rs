//! Multi-segment planar PCC robot.
//!
//! Each segment is a constant-curvature arc; consecutive arcs share pose and
//! tangent at the nodes. Inertia and gravity are integrated per segment with a
//! Gauss–Legendre rule, and the Coriolis matrix is assembled from Christoffel
//! symbols of finite-difference derivatives of `M`. Segment indices are
//! zero-based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cc::{fk_cc, jacobian_cc, Gravity, SegmentParams};
use crate::error::{Error, Result};
use crate::model::{BackbonePoint, PlanarPose, PotentialEnergy, SoftRobot};
use crate::numerics::{GaussLegendre, DEFAULT_FD_STEP, DEFAULT_QUADRATURE_ORDER};

/// Planar external wrench at a contact point: force [N] and torque [N·m].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench2D {
    pub fx: f64,
    pub fy: f64,
    pub tau_z: f64,
}

impl Wrench2D {
    pub fn to_dvector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.fx, self.fy, self.tau_z])
    }
}

/// How many constant-curvature segments represent one actuated body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// One CC segment per actuated body.
    Coarse,
    /// Two CC segments (`segment` and `segment + 1`) per actuated body.
    Fine,
}

/// One actuator, i.e. one column of `A(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Actuator {
    /// Pair of opposite torques at the base and tip of the actuated body
    /// (pressurized chambers, tendons anchored at the segment base).
    InternalPair {
        segment: usize,
        discretization: Discretization,
    },
    /// Force applied tangentially to the backbone at the tip of `segment`.
    TipTangentialForce { segment: usize },
    /// A constant generalized-force direction.
    Constant { column: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActuationPattern {
    /// A torque at the tip of every segment reacting on its base: `A = I`.
    TipTorquePerSegment,
    Actuators {
        actuators: Vec<Actuator>,
    },
}

impl ActuationPattern {
    pub fn actuators(actuators: Vec<Actuator>) -> Self {
        ActuationPattern::Actuators { actuators }
    }

    pub fn input_count(&self, dof: usize) -> usize {
        match self {
            ActuationPattern::TipTorquePerSegment => dof,
            ActuationPattern::Actuators { actuators } => actuators.len(),
        }
    }

    pub fn validate(&self, dof: usize) -> Result<()> {
        let ActuationPattern::Actuators { actuators } = self else {
            return Ok(());
        };
        if actuators.is_empty() {
            return Err(Error::PatternMismatch {
                reason: "at least one actuator is required".into(),
            });
        }
        if actuators.len() > dof {
            return Err(Error::PatternMismatch {
                reason: format!(
                    "{} actuators exceed {} degrees of freedom",
                    actuators.len(),
                    dof
                ),
            });
        }
        for a in actuators {
            match a {
                Actuator::InternalPair {
                    segment,
                    discretization,
                } => {
                    let last = match discretization {
                        Discretization::Coarse => *segment,
                        Discretization::Fine => segment + 1,
                    };
                    if last >= dof {
                        return Err(Error::PatternMismatch {
                            reason: format!("internal pair on segment {segment} ({discretization:?}) needs segment {last}"),
                        });
                    }
                }
                Actuator::TipTangentialForce { segment } => {
                    if *segment >= dof {
                        return Err(Error::SegmentOutOfRange {
                            index: *segment,
                            count: dof,
                        });
                    }
                }
                Actuator::Constant { column } => {
                    if column.len() != dof {
                        return Err(Error::DimensionMismatch {
                            what: "constant actuation column",
                            expected: dof,
                            found: column.len(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub segments: Vec<SegmentParams>,
    pub gravity: Gravity,
    pub actuation: ActuationPattern,
}

/// Base frames of every segment plus the tip, for one configuration.
struct Frames {
    bases: Vec<PlanarPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PccChain {
    params: ChainParams,
    rule: GaussLegendre,
}

impl PccChain {
    pub fn new(params: ChainParams) -> Result<Self> {
        Self::with_quadrature_order(params, DEFAULT_QUADRATURE_ORDER)
    }

    pub fn with_quadrature_order(params: ChainParams, order: usize) -> Result<Self> {
        if params.segments.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "segment count",
                expected: 1,
                found: 0,
            });
        }
        for s in &params.segments {
            s.validate()?;
        }
        Gravity::new(params.gravity.g, params.gravity.phi)?;
        params.actuation.validate(params.segments.len())?;
        Ok(Self {
            rule: GaussLegendre::new(order)?,
            params,
        })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    fn frames(&self, q: &DVector<f64>) -> Frames {
        let mut bases = Vec::with_capacity(self.params.segments.len() + 1);
        let mut frame = PlanarPose::default();
        bases.push(frame);
        for (seg, &qi) in self.params.segments.iter().zip(q.iter()) {
            frame = frame.compose(fk_cc(1.0, qi, seg.length));
            bases.push(frame);
        }
        Frames { bases }
    }

    fn check_point(&self, point: BackbonePoint) -> Result<()> {
        let count = self.params.segments.len();
        if point.segment >= count {
            return Err(Error::SegmentOutOfRange {
                index: point.segment,
                count,
            });
        }
        if !(0.0..=1.0).contains(&point.s) {
            return Err(Error::ArclengthOutOfRange { s: point.s });
        }
        Ok(())
    }

    fn point_pose(&self, frames: &Frames, segment: usize, s: f64, q: &DVector<f64>) -> PlanarPose {
        frames.bases[segment].compose(fk_cc(s, q[segment], self.params.segments[segment].length))
    }

    /// Chain-rule Jacobian written into `out` (3×n, columns past `segment` zero).
    fn point_jacobian(
        &self,
        frames: &Frames,
        segment: usize,
        s: f64,
        q: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) {
        out.fill(0.0);
        let p = self.point_pose(frames, segment, s, q);
        for j in 0..=segment {
            let base = frames.bases[j];
            let sj = if j == segment { s } else { 1.0 };
            let local = jacobian_cc(sj, q[j], self.params.segments[j].length);
            let (sn, cs) = base.theta.sin_cos();
            let mut dx = cs * local.x - sn * local.y;
            let mut dy = sn * local.x + cs * local.y;
            if j < segment {
                // rigid rotation of everything distal about the tip of segment j
                let pivot = frames.bases[j + 1];
                dx -= p.y - pivot.y;
                dy += p.x - pivot.x;
            }
            out[(0, j)] = dx;
            out[(1, j)] = dy;
            out[(2, j)] = local.z;
        }
    }

    fn mass_matrix_impl(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let frames = self.frames(q);
        let mut mass = DMatrix::zeros(n, n);
        let mut jac = DMatrix::zeros(3, n);
        for (i, seg) in self.params.segments.iter().enumerate() {
            for (s, w) in self.rule.nodes() {
                self.point_jacobian(&frames, i, s, q, &mut jac);
                let weight = w * seg.mass;
                for a in 0..=i {
                    for b in 0..=a {
                        let v = weight * (jac[(0, a)] * jac[(0, b)] + jac[(1, a)] * jac[(1, b)]);
                        mass[(a, b)] += v;
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                mass[(b, a)] = mass[(a, b)];
            }
        }
        mass
    }

    /// `∂M/∂q_k` for every k by central differences.
    fn mass_derivatives(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut probe = q.clone();
        (0..q.len())
            .map(|k| {
                let step = DEFAULT_FD_STEP * q[k].abs().max(1.0);
                let (hi, lo) = (q[k] + step, q[k] - step);
                probe[k] = hi;
                let plus = self.mass_matrix_impl(&probe);
                probe[k] = lo;
                let minus = self.mass_matrix_impl(&probe);
                probe[k] = q[k];
                (plus - minus) / (hi - lo)
            })
            .collect()
    }

    fn gravity_direction(&self) -> (f64, f64) {
        self.params.gravity.direction()
    }
}

/// Column of `A(q)` for one actuator.
fn actuator_column(chain: &PccChain, actuator: &Actuator, q: &DVector<f64>) -> DVector<f64> {
    let n = chain.dof();
    let mut col = DVector::zeros(n);
    match actuator {
        Actuator::InternalPair {
            segment,
            discretization,
        } => {
            // τ on the tip frame and −τ on the base frame of the actuated body:
            // the column is ∂θ_tip/∂q − ∂θ_base/∂q.
            col[*segment] = 1.0;
            if *discretization == Discretization::Fine {
                col[segment + 1] = 1.0;
            }
        }
        Actuator::TipTangentialForce { segment } => {
            let frames = chain.frames(q);
            let mut jac = DMatrix::zeros(3, n);
            chain.point_jacobian(&frames, *segment, 1.0, q, &mut jac);
            let theta = frames.bases[segment + 1].theta;
            let (sn, cs) = theta.sin_cos();
            for k in 0..n {
                col[k] = cs * jac[(0, k)] + sn * jac[(1, k)];
            }
        }
        Actuator::Constant { column } => {
            col.copy_from_slice(column);
        }
    }
    col
}

/// `A(q)` of `pattern` evaluated on `chain`.
pub fn actuation_matrix(
    chain: &PccChain,
    pattern: &ActuationPattern,
    q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = chain.dof();
    pattern.validate(n)?;
    crate::error::check_dim("configuration", n, q.len())?;
    Ok(match pattern {
        ActuationPattern::TipTorquePerSegment => DMatrix::identity(n, n),
        ActuationPattern::Actuators { actuators } => {
            let cols: Vec<DVector<f64>> = actuators
                .iter()
                .map(|a| actuator_column(chain, a, q))
                .collect();
            DMatrix::from_columns(&cols)
        }
    })
}

impl SoftRobot for PccChain {
    fn dof(&self) -> usize {
        self.params.segments.len()
    }

    fn inputs(&self) -> usize {
        self.params.actuation.input_count(self.dof())
    }

    fn segment_count(&self) -> usize {
        self.params.segments.len()
    }

    fn pose(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<PlanarPose> {
        self.check_point(point)?;
        let frames = self.frames(q);
        Ok(self.point_pose(&frames, point.segment, point.s, q))
    }

    fn jacobian(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(point)?;
        let frames = self.frames(q);
        let mut jac = DMatrix::zeros(3, self.dof());
        self.point_jacobian(&frames, point.segment, point.s, q, &mut jac);
        Ok(jac)
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.mass_matrix_impl(q)
    }

    fn coriolis_matrix(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let dm = self.mass_derivatives(q);
        DMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qdot[k])
                .sum()
        })
    }

    fn gravity_force(&self, q: &DVector<f64>) -> DVector<f64> {
        let n = self.dof();
        let (dx, dy) = self.gravity_direction();
        let g = self.params.gravity.g;
        let frames = self.frames(q);
        let mut jac = DMatrix::zeros(3, n);
        let mut force = DVector::zeros(n);
        for (i, seg) in self.params.segments.iter().enumerate() {
            for (s, w) in self.rule.nodes() {
                self.point_jacobian(&frames, i, s, q, &mut jac);
                let scale = -w * seg.mass * g;
                for k in 0..=i {
                    force[k] += scale * (jac[(0, k)] * dx + jac[(1, k)] * dy);
                }
            }
        }
        force
    }

    fn elastic_force(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            q.len(),
            self.params
                .segments
                .iter()
                .zip(q.iter())
                .map(|(s, &qi)| s.stiffness * qi),
        )
    }

    fn damping_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dof(),
            self.params.segments.iter().map(|s| s.damping),
        ))
    }

    fn actuation_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        actuation_matrix(self, &self.params.actuation, q)
            .expect("pattern validated at construction")
    }

    fn potential_energy(&self, q: &DVector<f64>) -> PotentialEnergy {
        let (dx, dy) = self.gravity_direction();
        let g = self.params.gravity.g;
        let straight = DVector::zeros(q.len());
        let (bent_frames, straight_frames) = (self.frames(q), self.frames(&straight));
        let mut gravity = 0.0;
        for (i, seg) in self.params.segments.iter().enumerate() {
            gravity += seg.mass
                * g
                * self.rule.integrate(|s| {
                    let x0 = self.point_pose(&straight_frames, i, s, &straight);
                    let x = self.point_pose(&bent_frames, i, s, q);
                    (x0.x - x.x) * dx + (x0.y - x.y) * dy
                });
        }
        let elastic = self
            .params
            .segments
            .iter()
            .zip(q.iter())
            .map(|(s, &qi)| 0.5 * s.stiffness * qi * qi)
            .sum();
        PotentialEnergy { elastic, gravity }
    }
}
