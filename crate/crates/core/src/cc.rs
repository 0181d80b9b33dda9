//! Closed-form planar constant-curvature segment.
//!
//! The configuration is the bending angle `q` (curvature with respect to the
//! normalized arclength). All expressions with a removable singularity at
//! `q = 0` switch to a Taylor series for `|q| < SERIES_CUTOFF`.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BackbonePoint, DynamicsTerms, PlanarPose, PotentialEnergy, RobotState, SoftRobot,
};

/// Below this magnitude of the trigonometric argument the series branch is used.
pub const SERIES_CUTOFF: f64 = 1.0;

/// Physical constants of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Mass [kg].
    pub mass: f64,
    /// Length [m].
    pub length: f64,
    /// Average stiffness `∫₀¹ k(s) ds` [N·m].
    pub stiffness: f64,
    /// Equivalent damping `∫₀¹ s d(s) ds` [N·m·s].
    pub damping: f64,
}

impl SegmentParams {
    pub fn new(mass: f64, length: f64, stiffness: f64, damping: f64) -> Result<Self> {
        let p = Self {
            mass,
            length,
            stiffness,
            damping,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("mass", self.mass)?;
        positive("length", self.length)?;
        non_negative("stiffness", self.stiffness)?;
        non_negative("damping", self.damping)
    }
}

/// Gravity acting on the robot base: magnitude and the base orientation `φ`
/// with respect to the gravity direction. `φ = 0` hangs the straight robot
/// along gravity, `φ = π` points it upwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gravity {
    pub g: f64,
    pub phi: f64,
}

impl Gravity {
    pub const STANDARD: f64 = 9.81;

    pub fn new(g: f64, phi: f64) -> Result<Self> {
        non_negative("g", g)?;
        if !phi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "phi",
                value: phi,
                reason: "must be finite",
            });
        }
        Ok(Self { g, phi })
    }

    pub fn zero() -> Self {
        Self { g: 0.0, phi: 0.0 }
    }

    /// Unit direction of the gravity acceleration in the base frame.
    pub fn direction(&self) -> (f64, f64) {
        (self.phi.cos(), self.phi.sin())
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

pub(crate) fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be non-negative and finite",
        })
    }
}

/// Shape functions of the segment and their series expansions.
pub mod shape {
    use super::SERIES_CUTOFF;

    // Taylor coefficients, in powers of u² (times u for the odd functions).
    const SINC: [f64; 11] = [
        1.0,
        -0.16666666666666666,
        0.008333333333333333,
        -0.0001984126984126984,
        2.7557319223985893e-06,
        -2.505210838544172e-08,
        1.6059043836821613e-10,
        -7.647163731819816e-13,
        2.8114572543455206e-15,
        -8.22063524662433e-18,
        1.9572941063391263e-20,
    ];
    const VERS: [f64; 10] = [
        0.5,
        -0.041666666666666664,
        0.001388888888888889,
        -2.48015873015873e-05,
        2.755731922398589e-07,
        -2.08767569878681e-09,
        1.1470745597729725e-11,
        -4.779477332387385e-14,
        1.5619206968586225e-16,
        -4.110317623312165e-19,
    ];
    const DSINC: [f64; 10] = [
        -0.3333333333333333,
        0.03333333333333333,
        -0.0011904761904761906,
        2.2045855379188714e-05,
        -2.505210838544172e-07,
        1.9270852604185937e-09,
        -1.0706029224547743e-11,
        4.498331606952833e-14,
        -1.4797143443923793e-16,
        3.9145882126782523e-19,
    ];
    const DVERS: [f64; 11] = [
        0.5,
        -0.125,
        0.006944444444444444,
        -0.00017361111111111112,
        2.48015873015873e-06,
        -2.296443268665491e-08,
        1.4911969277048643e-10,
        -7.169215998581078e-13,
        2.6552651846596585e-15,
        -7.809603484293113e-18,
        1.8683261924146203e-20,
    ];
    const INERTIA: [f64; 10] = [
        1.0,
        -0.03968253968253968,
        0.0007716049382716049,
        -9.018759018759019e-06,
        7.06597928820151e-08,
        -3.976525140546305e-10,
        1.6868743526073124e-12,
        -5.5900319677045444e-15,
        1.4875435208177358e-17,
        -3.2492629433297745e-20,
    ];
    const CENTRIFUGAL: [f64; 9] = [
        -0.001984126984126984,
        7.716049382716049e-05,
        -1.3528138528138528e-06,
        1.413195857640302e-08,
        -9.941312851365762e-11,
        5.060623057821937e-13,
        -1.9565111886965905e-15,
        5.9501740832709435e-18,
        -1.4621683244983985e-20,
    ];
    const GRAV_COS: [f64; 10] = [
        -0.08333333333333333,
        0.005555555555555556,
        -0.00014880952380952382,
        2.204585537918871e-06,
        -2.08767569878681e-08,
        1.376489471727567e-10,
        -6.691268265342339e-13,
        2.499073114973796e-15,
        -7.398571721961897e-18,
        1.7793582784901146e-20,
    ];
    const GRAV_SIN: [f64; 10] = [
        0.16666666666666666,
        -0.025,
        0.000992063492063492,
        -1.9290123456790123e-05,
        2.2546897546897547e-07,
        -1.7664948220503776e-09,
        9.941312851365761e-12,
        -4.217185881518281e-14,
        1.3975079919261362e-16,
        -3.7188588020443397e-19,
    ];
    const POT_SIN: [f64; 10] = [
        0.16666666666666666,
        -0.008333333333333333,
        0.0001984126984126984,
        -2.7557319223985893e-06,
        2.505210838544172e-08,
        -1.6059043836821613e-10,
        7.647163731819816e-13,
        -2.8114572543455206e-15,
        8.22063524662433e-18,
        -1.9572941063391263e-20,
    ];

    fn even(c: &[f64], u: f64) -> f64 {
        let u2 = u * u;
        c.iter().rev().fold(0.0, |acc, &k| acc * u2 + k)
    }

    fn odd(c: &[f64], u: f64) -> f64 {
        u * even(c, u)
    }

    fn half_vers(u: f64) -> f64 {
        // 1 - cos u without cancellation
        let s = (0.5 * u).sin();
        2.0 * s * s
    }

    macro_rules! dispatch {
        ($($name:ident),*) => {
            $(
                pub fn $name(u: f64) -> f64 {
                    if u.abs() < SERIES_CUTOFF {
                        series::$name(u)
                    } else {
                        direct::$name(u)
                    }
                }
            )*
        };
    }

    // sinc = sin u / u, vers = (1 - cos u) / u and their derivatives;
    // inertia and centrifugal are the normalized M(q) and ½M'(q)/(mL²);
    // grav_* and pot_* are the cos φ / sin φ parts of G and U_G.
    dispatch!(
        sinc,
        vers,
        dsinc,
        dvers,
        inertia,
        centrifugal,
        grav_cos,
        grav_sin,
        pot_cos,
        pot_sin
    );

    pub mod series {
        use super::*;

        pub fn sinc(u: f64) -> f64 {
            even(&SINC, u)
        }
        pub fn vers(u: f64) -> f64 {
            odd(&VERS, u)
        }
        pub fn dsinc(u: f64) -> f64 {
            odd(&DSINC, u)
        }
        pub fn dvers(u: f64) -> f64 {
            even(&DVERS, u)
        }
        pub fn inertia(u: f64) -> f64 {
            even(&INERTIA, u)
        }
        pub fn centrifugal(u: f64) -> f64 {
            odd(&CENTRIFUGAL, u)
        }
        pub fn grav_cos(u: f64) -> f64 {
            odd(&GRAV_COS, u)
        }
        pub fn grav_sin(u: f64) -> f64 {
            even(&GRAV_SIN, u)
        }
        pub fn pot_cos(u: f64) -> f64 {
            // (1 - cos u) / u² shares the coefficients of (1 - cos u) / u
            even(&VERS, u)
        }
        pub fn pot_sin(u: f64) -> f64 {
            odd(&POT_SIN, u)
        }
    }

    pub mod direct {
        use super::half_vers;

        pub fn sinc(u: f64) -> f64 {
            u.sin() / u
        }
        pub fn vers(u: f64) -> f64 {
            half_vers(u) / u
        }
        pub fn dsinc(u: f64) -> f64 {
            (u * u.cos() - u.sin()) / (u * u)
        }
        pub fn dvers(u: f64) -> f64 {
            (u * u.sin() - half_vers(u)) / (u * u)
        }
        pub fn inertia(q: f64) -> f64 {
            20.0 / 3.0 * (q.powi(3) + 6.0 * q - 12.0 * q.sin() + 6.0 * q * q.cos()) / q.powi(5)
        }
        pub fn centrifugal(q: f64) -> f64 {
            let (s, c) = q.sin_cos();
            -(12.0 * q - 30.0 * s + 3.0 * q * q * s + 18.0 * q * c + q.powi(3)) / (3.0 * q.powi(6))
        }
        pub fn grav_cos(q: f64) -> f64 {
            -2.0 * half_vers(q) / q.powi(3) + q.sin() / (q * q)
        }
        pub fn grav_sin(q: f64) -> f64 {
            2.0 * q.sin() / q.powi(3) - (1.0 + q.cos()) / (q * q)
        }
        pub fn pot_cos(q: f64) -> f64 {
            half_vers(q) / (q * q)
        }
        pub fn pot_sin(q: f64) -> f64 {
            (q - q.sin()) / (q * q)
        }
    }
}

/// Pose of the backbone frame at normalized arclength `s`.
pub fn fk_cc(s: f64, q: f64, length: f64) -> PlanarPose {
    let u = s * q;
    PlanarPose::new(length * s * shape::sinc(u), length * s * shape::vers(u), u)
}

/// `∂fk_cc/∂q` as (x, y, θ).
pub fn jacobian_cc(s: f64, q: f64, length: f64) -> Vector3<f64> {
    let u = s * q;
    let s2 = s * s;
    Vector3::new(
        length * s2 * shape::dsinc(u),
        length * s2 * shape::dvers(u),
        s,
    )
}

/// Inertia seen by the bending angle for a uniform thin rod.
pub fn mass_cc(q: f64, mass: f64, length: f64) -> f64 {
    mass * length * length / 20.0 * shape::inertia(q)
}

/// Centrifugal force `C(q, q̇) q̇ = ½ M'(q) q̇²`.
pub fn coriolis_cc(q: f64, qdot: f64, mass: f64, length: f64) -> f64 {
    coriolis_coefficient_cc(q, qdot, mass, length) * qdot
}

/// The scalar `C(q, q̇)` with `Ṁ − 2C = 0`.
pub fn coriolis_coefficient_cc(q: f64, qdot: f64, mass: f64, length: f64) -> f64 {
    mass * length * length * shape::centrifugal(q) * qdot
}

pub fn gravity_cc(q: f64, phi: f64, mass: f64, g: f64, length: f64) -> f64 {
    let (sp, cp) = phi.sin_cos();
    -mass * g * length * (cp * shape::grav_cos(q) + sp * shape::grav_sin(q))
}

/// Gravity potential relative to the straight configuration.
pub fn gravity_potential_cc(q: f64, phi: f64, mass: f64, g: f64, length: f64) -> f64 {
    let (sp, cp) = phi.sin_cos();
    mass * g * length * (cp * (0.5 - shape::pot_cos(q)) - sp * shape::pot_sin(q))
}

/// Elastic torque `k̄ q` and damping torque `d̄ q̇`.
pub fn impedance_cc(q: f64, qdot: f64, stiffness: f64, damping: f64) -> (f64, f64) {
    (stiffness * q, damping * qdot)
}

/// All dynamics terms of a tip-torque actuated segment.
pub fn cc_terms(
    state: &RobotState,
    params: &SegmentParams,
    gravity: &Gravity,
) -> Result<DynamicsTerms> {
    CcSegment::new(*params, *gravity)?.terms(state)
}

/// Single constant-curvature segment actuated by a pure tip torque (`A = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcSegment {
    pub params: SegmentParams,
    pub gravity: Gravity,
}

impl CcSegment {
    pub fn new(params: SegmentParams, gravity: Gravity) -> Result<Self> {
        params.validate()?;
        Gravity::new(gravity.g, gravity.phi)?;
        Ok(Self { params, gravity })
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

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn scalar_matrix(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

impl SoftRobot for CcSegment {
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
        Ok(fk_cc(point.s, q[0], self.params.length))
    }

    fn jacobian(&self, point: BackbonePoint, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        Self::check_point(point)?;
        let j = jacobian_cc(point.s, q[0], self.params.length);
        Ok(DMatrix::from_column_slice(3, 1, j.as_slice()))
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        scalar_matrix(mass_cc(q[0], self.params.mass, self.params.length))
    }

    fn coriolis_matrix(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        scalar_matrix(coriolis_coefficient_cc(
            q[0],
            qdot[0],
            self.params.mass,
            self.params.length,
        ))
    }

    fn gravity_force(&self, q: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        scalar(gravity_cc(
            q[0],
            self.gravity.phi,
            p.mass,
            self.gravity.g,
            p.length,
        ))
    }

    fn elastic_force(&self, q: &DVector<f64>) -> DVector<f64> {
        scalar(self.params.stiffness * q[0])
    }

    fn damping_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        scalar_matrix(self.params.damping)
    }

    fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        scalar_matrix(1.0)
    }

    fn potential_energy(&self, q: &DVector<f64>) -> PotentialEnergy {
        let p = &self.params;
        PotentialEnergy {
            elastic: 0.5 * p.stiffness * q[0] * q[0],
            gravity: gravity_potential_cc(q[0], self.gravity.phi, p.mass, self.gravity.g, p.length),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_gradient, GaussLegendre, DEFAULT_FD_STEP};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    const FIG_M: f64 = 0.5;
    const FIG_L: f64 = 0.25;

    fn fd1(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn fk_straight_limit_and_base() {
        let p = fk_cc(1.0, 0.0, 0.3);
        assert_eq!((p.x, p.y, p.theta), (0.3, 0.0, 0.0));
        let p = fk_cc(1.0, 1e-12, 0.3);
        assert!((p.x - 0.3).abs() < 1e-15 && p.y.abs() < 1e-12);
        let b = fk_cc(0.0, 2.7, 0.3);
        assert_eq!((b.x, b.y, b.theta), (0.0, 0.0, 0.0));
    }

    #[test]
    fn fk_quarter_circle() {
        let p = fk_cc(1.0, FRAC_PI_2, 1.0);
        assert!((p.x - 2.0 / PI).abs() < 1e-15);
        assert!((p.y - 2.0 / PI).abs() < 1e-15);
        assert!((p.theta - FRAC_PI_2).abs() < 1e-15);
        assert!((p.x - std::f64::consts::FRAC_2_PI).abs() < 1e-5);
    }

    #[test]
    fn jacobian_limits_and_fd() {
        assert_eq!(jacobian_cc(0.0, 1.3, 0.5), Vector3::zeros());
        let j0 = jacobian_cc(1.0, 0.0, 0.5);
        assert_eq!(j0, Vector3::new(0.0, 0.25, 1.0));
        // FD of fk near zero agrees with the series limit (0, L/2, 1)
        let fd_y = fd1(|q| fk_cc(1.0, q, 0.5).y, 0.0);
        assert!((fd_y - 0.25).abs() < 1e-9);
        let j = jacobian_cc(1.0, PI, 1.0);
        let fd = Vector3::new(
            fd1(|q| fk_cc(1.0, q, 1.0).x, PI),
            fd1(|q| fk_cc(1.0, q, 1.0).y, PI),
            fd1(|q| fk_cc(1.0, q, 1.0).theta, PI),
        );
        assert!((j - fd).norm() < 1e-6);
    }

    #[test]
    fn mass_values() {
        assert!((mass_cc(0.0, 2.0, 3.0) - 2.0 * 9.0 / 20.0).abs() < 1e-15);
        let m_pi = mass_cc(PI, 1.0, 1.0);
        assert!((m_pi - 1.0 / (3.0 * PI * PI)).abs() < 1e-15);
        assert!((m_pi - 0.033773).abs() < 1e-6);
    }

    #[test]
    fn mass_matches_inertia_quadrature() {
        let rule = GaussLegendre::new(16).unwrap();
        for &q in &[-5.0, -1.0, -0.3, 1e-9, 0.7, 2.0, 6.0] {
            let quad = rule.integrate(|s| {
                let j = jacobian_cc(s, q, FIG_L);
                FIG_M * (j.x * j.x + j.y * j.y)
            });
            let closed = mass_cc(q, FIG_M, FIG_L);
            assert!((quad - closed).abs() <= 1e-8 * closed, "q = {q}");
        }
    }

    #[test]
    fn coriolis_values() {
        assert_eq!(coriolis_cc(0.8, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(coriolis_cc(0.0, 3.0, 1.0, 1.0), 0.0);
        let expected = 0.5 * fd1(|q| mass_cc(q, 1.0, 1.0), 1.0) * 4.0;
        let c = coriolis_cc(1.0, 2.0, 1.0, 1.0);
        assert!((c - expected).abs() < 1e-6 * expected.abs());
    }

    #[test]
    fn gravity_values_and_stiffness_sign() {
        let (m, g, l) = (FIG_M, 9.81, FIG_L);
        assert_eq!(gravity_cc(0.0, 0.0, m, g, l), 0.0);
        let down = fd1(|q| gravity_cc(q, 0.0, m, g, l), 0.0);
        let up = fd1(|q| gravity_cc(q, PI, m, g, l), 0.0);
        let expected = m * g * l / 12.0;
        assert!(down > 0.0 && up < 0.0);
        assert!((down - expected).abs() < 1e-6 * expected);
        assert!((up + expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn gravity_is_gradient_of_potential() {
        let (m, g, l) = (FIG_M, 9.81, FIG_L);
        for &phi in &[0.0, 0.4, -FRAC_PI_2, PI, 2.5] {
            for &q in &[-4.0, -0.5, 0.5, 1.0, 3.3] {
                let fd = fd1(|x| gravity_potential_cc(x, phi, m, g, l), q);
                let gq = gravity_cc(q, phi, m, g, l);
                assert!(
                    (fd - gq).abs() <= 1e-6 * gq.abs().max(1e-3),
                    "q {q} phi {phi}"
                );
            }
        }
        let model = CcSegment::new(
            SegmentParams::new(m, l, 0.0, 0.0).unwrap(),
            Gravity::new(g, 0.0).unwrap(),
        )
        .unwrap();
        let q = DVector::from_element(1, 0.5);
        let grad = fd_gradient(|q| model.potential_energy(q).gravity, &q, DEFAULT_FD_STEP).unwrap();
        let closed = gravity_cc(0.5, 0.0, m, g, l);
        assert!((grad[0] - closed).abs() < 1e-6 * closed.abs());
    }

    #[test]
    fn gravity_potential_matches_integrand_quadrature() {
        let (m, g, l) = (FIG_M, 9.81, FIG_L);
        let rule = GaussLegendre::new(16).unwrap();
        for &phi in &[0.0f64, 1.0, -2.0] {
            for &q in &[-3.0, 0.2, 2.0] {
                let (dx, dy) = (phi.cos(), phi.sin());
                let quad = rule.integrate(|s| {
                    let straight = fk_cc(s, 0.0, l);
                    let bent = fk_cc(s, q, l);
                    m * g * ((straight.x - bent.x) * dx + (straight.y - bent.y) * dy)
                });
                let closed = gravity_potential_cc(q, phi, m, g, l);
                assert!((quad - closed).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn impedance_values() {
        assert_eq!(impedance_cc(0.0, 0.0, 0.05, 0.01), (0.0, 0.0));
        let (k, _) = impedance_cc(FRAC_PI_3, 0.0, 0.05, 0.01);
        assert!((k - 0.05 * FRAC_PI_3).abs() < 1e-16);
        assert!((k - 0.05236).abs() < 1e-5);
        assert_eq!(impedance_cc(0.0, 1.0, 0.05, 0.01).1, 0.01);
    }

    #[test]
    fn terms_at_rest_straight() {
        let params = SegmentParams::new(FIG_M, FIG_L, 0.05, 0.01).unwrap();
        let gravity = Gravity::new(9.81, 0.0).unwrap();
        let state = RobotState::new(DVector::zeros(1), DVector::zeros(1)).unwrap();
        let t = cc_terms(&state, &params, &gravity).unwrap();
        assert_eq!(t.gravity[0], 0.0);
        assert_eq!(t.elastic[0], 0.0);
        assert_eq!(t.coriolis[(0, 0)], 0.0);
        assert_eq!(t.actuation[(0, 0)], 1.0);
        assert!((t.mass[(0, 0)] - FIG_M * FIG_L * FIG_L / 20.0).abs() < 1e-18);

        let tiny = RobotState::new(
            DVector::from_element(1, 1e-9),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(cc_terms(&tiny, &params, &gravity).is_ok());
    }

    #[test]
    fn series_and_direct_agree_at_cutoff() {
        type F = fn(f64) -> f64;
        let pairs: [(&str, F, F); 10] = [
            ("sinc", shape::series::sinc, shape::direct::sinc),
            ("vers", shape::series::vers, shape::direct::vers),
            ("dsinc", shape::series::dsinc, shape::direct::dsinc),
            ("dvers", shape::series::dvers, shape::direct::dvers),
            ("inertia", shape::series::inertia, shape::direct::inertia),
            (
                "centrifugal",
                shape::series::centrifugal,
                shape::direct::centrifugal,
            ),
            ("grav_cos", shape::series::grav_cos, shape::direct::grav_cos),
            ("grav_sin", shape::series::grav_sin, shape::direct::grav_sin),
            ("pot_cos", shape::series::pot_cos, shape::direct::pot_cos),
            ("pot_sin", shape::series::pot_sin, shape::direct::pot_sin),
        ];
        for (name, series, direct) in pairs {
            for &u in &[
                SERIES_CUTOFF,
                -SERIES_CUTOFF,
                0.999 * SERIES_CUTOFF,
                1.001 * SERIES_CUTOFF,
            ] {
                let (a, b) = (series(u), direct(u));
                assert!((a - b).abs() < 1e-12, "{name} at {u}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_points() {
        let model = CcSegment::new(
            SegmentParams::new(1.0, 1.0, 1.0, 0.0).unwrap(),
            Gravity::zero(),
        )
        .unwrap();
        let q = DVector::zeros(1);
        assert!(matches!(
            model.pose(BackbonePoint::tip_of(1), &q),
            Err(Error::SegmentOutOfRange { .. })
        ));
        assert!(SegmentParams::new(-1.0, 1.0, 0.0, 0.0).is_err());
        assert!(SegmentParams::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(Gravity::new(-1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn mass_positive_and_even(q in -2.0 * PI..2.0 * PI) {
            let m = mass_cc(q, 1.0, 1.0);
            prop_assert!(m > 0.0);
            prop_assert!((m - mass_cc(-q, 1.0, 1.0)).abs() <= 1e-15 * m.max(1e-3));
        }

        #[test]
        fn gravity_symmetries(q in -2.0 * PI..2.0 * PI, phi in -PI..PI) {
            let g = gravity_cc(q, phi, 0.5, 9.81, 0.25);
            prop_assert!((g + gravity_cc(q, phi + PI, 0.5, 9.81, 0.25)).abs() < 1e-12);
            prop_assert!((g + gravity_cc(-q, -phi, 0.5, 9.81, 0.25)).abs() < 1e-12);
        }

        #[test]
        fn centrifugal_pushes_curvature_outward(q in 0.01f64..2.0 * PI, qdot in 0.1f64..5.0, neg in any::<bool>(), back in any::<bool>()) {
            let q = if neg { -q } else { q };
            let qdot = if back { -qdot } else { qdot };
            let force = -coriolis_cc(q, qdot, 1.0, 1.0);
            prop_assert_eq!(force.signum(), q.signum());
        }

        #[test]
        fn jacobian_matches_fd(s in 0.0f64..=1.0, q in -2.0 * PI..2.0 * PI) {
            let j = jacobian_cc(s, q, 0.4);
            let fd = Vector3::new(
                fd1(|x| fk_cc(s, x, 0.4).x, q),
                fd1(|x| fk_cc(s, x, 0.4).y, q),
                fd1(|x| fk_cc(s, x, 0.4).theta, q),
            );
            prop_assert!((j - fd).norm() <= 1e-5 * j.norm().max(1e-3));
        }
    }
}
