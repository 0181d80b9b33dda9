//! Model-based controllers: regulation, tracking, underactuated regulation,
//! kinematic and operational-space task control, and iterative learning.
//!
//! The free functions evaluate one control law at one state; the structs wrap
//! them as [`Controller`]s for the simulator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    attainability, effective_stiffness, lyapunov_value, solve_equilibrium, CLASSIFY_TOL,
};
use crate::error::{check_dim, Error, Result};
use crate::model::{check_configuration, BackbonePoint, RobotState, SoftRobot};
use crate::numerics::{
    damped_pseudo_inverse, fd_directional, left_inverse, pseudo_inverse, singular_values,
    symmetrize, DEFAULT_FD_STEP, PINV_RCOND,
};
use crate::sim::{Controller, Simulator, Trajectory};

/// Singular-value ratio below which the kinematic law switches to damped least squares.
pub const DLS_THRESHOLD: f64 = 1e-8;

/// Damping of the damped least-squares inverse relative to `σ_max`.
pub const DLS_DAMPING: f64 = 1e-6;

fn require_identity_actuation(model: &dyn SoftRobot, q: &DVector<f64>) -> Result<()> {
    let (n, m) = (model.dof(), model.inputs());
    if n != m {
        return Err(Error::NotFullyActuated { dof: n, inputs: m });
    }
    let a = model.actuation_matrix(q);
    if (a - DMatrix::identity(n, n)).amax() > 1e-12 {
        return Err(Error::PatternMismatch {
            reason: "fully actuated laws need A = I".into(),
        });
    }
    Ok(())
}

fn check_square(what: &'static str, gain: &DMatrix<f64>, dim: usize) -> Result<()> {
    if gain.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            what,
            expected: dim,
            found: if gain.nrows() != dim {
                gain.nrows()
            } else {
                gain.ncols()
            },
        });
    }
    Ok(())
}

/// Checks that a gain matrix is symmetric positive semidefinite.
pub fn validate_gain(name: &'static str, gain: &DMatrix<f64>) -> Result<()> {
    if !gain.is_square() {
        return Err(Error::DimensionMismatch {
            what: "gain matrix",
            expected: gain.nrows(),
            found: gain.ncols(),
        });
    }
    let scale = gain.amax().max(1.0);
    if (gain - gain.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter {
            name,
            value: (gain - gain.transpose()).amax(),
            reason: "gain must be symmetric",
        });
    }
    if gain.nrows() > 0 {
        let min = symmetrize(gain).symmetric_eigenvalues().min();
        if min < -1e-12 * scale {
            return Err(Error::InvalidParameter {
                name,
                value: min,
                reason: "gain must be positive semidefinite",
            });
        }
    }
    Ok(())
}

/// `τ = K(q̄) + G(q̄)`.
pub fn ff_regulation(model: &dyn SoftRobot, q_bar: &DVector<f64>) -> Result<DVector<f64>> {
    check_configuration(model, q_bar)?;
    require_identity_actuation(model, q_bar)?;
    Ok(model.potential_force(q_bar))
}

/// `τ = K(q̄) + G(q̄) + α(q̄ − q) − β q̇`.
pub fn pd_setpoint(
    model: &dyn SoftRobot,
    q_bar: &DVector<f64>,
    state: &RobotState,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = model.dof();
    check_dim("state", n, state.dof())?;
    check_square("alpha", alpha, n)?;
    check_square("beta", beta, n)?;
    Ok(ff_regulation(model, q_bar)? + alpha * (q_bar - &state.q) - beta * &state.qdot)
}

/// Reference configuration with its first two time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub qddot: DVector<f64>,
}

/// A twice-differentiable configuration reference.
pub trait Reference: Send + Sync {
    fn dof(&self) -> usize;
    fn sample(&self, t: f64) -> ReferenceSample;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantReference {
    pub q: DVector<f64>,
}

impl Reference for ConstantReference {
    fn dof(&self) -> usize {
        self.q.len()
    }

    fn sample(&self, _t: f64) -> ReferenceSample {
        let n = self.q.len();
        ReferenceSample {
            q: self.q.clone(),
            qdot: DVector::zeros(n),
            qddot: DVector::zeros(n),
        }
    }
}

/// `q̄_i(t) = offset_i + amplitude_i sin(ω_i t + phase_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidReference {
    pub offset: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub omega: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SinusoidReference {
    pub fn new(
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        omega: Vec<f64>,
        phase: Vec<f64>,
    ) -> Result<Self> {
        let n = offset.len();
        check_dim("sinusoid amplitude", n, amplitude.len())?;
        check_dim("sinusoid frequency", n, omega.len())?;
        check_dim("sinusoid phase", n, phase.len())?;
        if n == 0 {
            return Err(Error::DimensionMismatch {
                what: "sinusoid reference",
                expected: 1,
                found: 0,
            });
        }
        Ok(Self {
            offset,
            amplitude,
            omega,
            phase,
        })
    }

    /// The same sinusoid on every coordinate.
    pub fn uniform(n: usize, offset: f64, amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            offset: vec![offset; n],
            amplitude: vec![amplitude; n],
            omega: vec![omega; n],
            phase: vec![phase; n],
        }
    }
}

impl Reference for SinusoidReference {
    fn dof(&self) -> usize {
        self.offset.len()
    }

    fn sample(&self, t: f64) -> ReferenceSample {
        let n = self.dof();
        let arg = |i: usize| self.omega[i] * t + self.phase[i];
        ReferenceSample {
            q: DVector::from_fn(n, |i, _| self.offset[i] + self.amplitude[i] * arg(i).sin()),
            qdot: DVector::from_fn(n, |i, _| self.amplitude[i] * self.omega[i] * arg(i).cos()),
            qddot: DVector::from_fn(n, |i, _| {
                -self.amplitude[i] * self.omega[i].powi(2) * arg(i).sin()
            }),
        }
    }
}

fn check_tracking(
    model: &dyn SoftRobot,
    reference: &ReferenceSample,
    state: &RobotState,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> Result<()> {
    let n = model.dof();
    check_dim("state", n, state.dof())?;
    check_dim("reference", n, reference.q.len())?;
    check_square("alpha", alpha, n)?;
    check_square("beta", beta, n)?;
    require_identity_actuation(model, &state.q)
}

/// Feedforward of the reference dynamics plus PD feedback; `M`, `C`, `G`, `K`
/// on the reference and `D` on the measured configuration.
pub fn tracking_ff(
    model: &dyn SoftRobot,
    reference: &ReferenceSample,
    state: &RobotState,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_tracking(model, reference, state, alpha, beta)?;
    let r = reference;
    Ok(model.mass_matrix(&r.q) * &r.qddot
        + model.coriolis_matrix(&r.q, &r.qdot) * &r.qdot
        + model.damping_matrix(&state.q) * &r.qdot
        + model.potential_force(&r.q)
        + alpha * (&r.q - &state.q)
        + beta * (&r.qdot - &state.qdot))
}

/// PD+: like [`tracking_ff`] with every model term on the measured state.
pub fn pd_plus(
    model: &dyn SoftRobot,
    reference: &ReferenceSample,
    state: &RobotState,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_tracking(model, reference, state, alpha, beta)?;
    let r = reference;
    let q = &state.q;
    Ok(model.mass_matrix(q) * &r.qddot
        + model.coriolis_matrix(q, &state.qdot) * &r.qdot
        + model.damping_matrix(q) * &r.qdot
        + model.potential_force(q)
        + alpha * (&r.q - q)
        + beta * (&r.qdot - &state.qdot))
}

/// `τ = A^L(q̄)(K(q̄) + G(q̄))`, provided some input holds `q̄`.
pub fn ua_feedforward(model: &dyn SoftRobot, q_bar: &DVector<f64>) -> Result<DVector<f64>> {
    let residual = attainability(model, q_bar)?;
    if residual > CLASSIFY_TOL {
        return Err(Error::UnattainableEquilibrium { residual });
    }
    Ok(left_inverse(&model.actuation_matrix(q_bar))? * model.potential_force(q_bar))
}

/// `τ = A^L(K + G)(q̄) + α Aᵀ(q̄ − q) − β Aᵀ q̇` with `A = A(q̄)`.
pub fn ua_pd(
    model: &dyn SoftRobot,
    q_bar: &DVector<f64>,
    state: &RobotState,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_dim("state", model.dof(), state.dof())?;
    let m = model.inputs();
    check_square("alpha", alpha, m)?;
    check_square("beta", beta, m)?;
    let ff = ua_feedforward(model, q_bar)?;
    let at = model.actuation_matrix(q_bar).transpose();
    Ok(ff + alpha * (&at * (q_bar - &state.q)) - beta * (&at * &state.qdot))
}

/// Which rows of the planar pose form the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// `(x, y)`.
    #[default]
    Position,
    /// `(x, y, θ)`.
    Pose,
}

impl TaskSpace {
    pub fn dim(self) -> usize {
        match self {
            TaskSpace::Position => 2,
            TaskSpace::Pose => 3,
        }
    }

    pub fn select(self, pose_rows: &DMatrix<f64>) -> DMatrix<f64> {
        pose_rows.rows(0, self.dim()).into_owned()
    }

    pub fn select_vector(self, v: &DVector<f64>) -> DVector<f64> {
        v.rows(0, self.dim()).into_owned()
    }

    pub fn task_jacobian(
        self,
        model: &dyn SoftRobot,
        point: BackbonePoint,
        q: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        Ok(self.select(&model.jacobian(point, q)?))
    }

    pub fn task_value(
        self,
        model: &dyn SoftRobot,
        point: BackbonePoint,
        q: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.select_vector(&model.pose(point, q)?.to_dvector()))
    }
}

/// Joint-velocity command of the kinematic task law.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicCommand {
    pub qdot: DVector<f64>,
    /// Whether the damped least-squares inverse was used.
    pub damped: bool,
}

/// Inverse of a (possibly rectangular) task Jacobian, switching to damped
/// least squares near singularities.
pub fn task_inverse(j: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let s = singular_values(j);
    let smax = s.first().copied().unwrap_or(0.0);
    // more task rows than joints can never be full row rank
    let smin = if j.nrows() > j.ncols() {
        0.0
    } else {
        s.last().copied().unwrap_or(0.0)
    };
    if smax > 0.0 && smin / smax >= DLS_THRESHOLD {
        (pseudo_inverse(j, PINV_RCOND), false)
    } else {
        (
            damped_pseudo_inverse(j, DLS_DAMPING * smax.max(f64::MIN_POSITIVE)),
            true,
        )
    }
}

/// `q̇ = J⁺(q)(K_e(x̄ − h(q)) + ẋ̄)` for the task rows of `point`.
pub fn kinematic_task(
    model: &dyn SoftRobot,
    point: BackbonePoint,
    task: TaskSpace,
    x_bar: &DVector<f64>,
    xdot_bar: &DVector<f64>,
    q: &DVector<f64>,
    k_e: &DMatrix<f64>,
) -> Result<KinematicCommand> {
    check_configuration(model, q)?;
    let d = task.dim();
    check_dim("task target", d, x_bar.len())?;
    check_dim("task velocity", d, xdot_bar.len())?;
    check_square("task gain", k_e, d)?;
    let j = task.task_jacobian(model, point, q)?;
    let x = task.task_value(model, point, q)?;
    let (inv, damped) = task_inverse(&j);
    Ok(KinematicCommand {
        qdot: inv * (k_e * (x_bar - x) + xdot_bar),
        damped,
    })
}

/// Equilibrium reached under `τ̄` and the sensitivity of the point pose to the
/// input there.
#[derive(Debug, Clone, PartialEq)]
pub struct EndToEnd {
    pub q_bar: DVector<f64>,
    /// `J(q̄) [∂(K + G − A τ̄)/∂q]⁻¹ A(q̄)`, 3×m.
    pub jacobian: DMatrix<f64>,
}

/// Solves the equilibrium of `τ̄` from `q_guess` and linearizes the
/// input-to-pose map there.
pub fn end_to_end_jacobian(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    q_guess: &DVector<f64>,
    point: BackbonePoint,
) -> Result<EndToEnd> {
    let eq = solve_equilibrium(model, tau_bar, q_guess)?;
    let jacobian = end_to_end_at(model, tau_bar, &eq.q_bar, point)?;
    Ok(EndToEnd {
        q_bar: eq.q_bar,
        jacobian,
    })
}

fn end_to_end_at(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    q_bar: &DVector<f64>,
    point: BackbonePoint,
) -> Result<DMatrix<f64>> {
    let raw = crate::numerics::fd_jacobian(
        |q| crate::analysis::static_residual(model, tau_bar, q),
        q_bar,
        DEFAULT_FD_STEP,
    )?;
    let inv = raw.lu().try_inverse().ok_or(Error::SingularStiffness)?;
    if !inv.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularStiffness);
    }
    Ok(model.jacobian(point, q_bar)? * inv * model.actuation_matrix(q_bar))
}

/// One sample of the quasi-static underactuated kinematic loop.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicLoopSample {
    pub t: f64,
    pub tau: DVector<f64>,
    pub q: DVector<f64>,
    pub x: DVector<f64>,
}

/// Integrates `τ̇ = J_e2e⁺(K_e(x̄ − x) + ẋ̄)` with explicit Euler steps, the
/// robot resting at the equilibrium of the current input.
#[allow(clippy::too_many_arguments)]
pub fn underactuated_kinematic_loop(
    model: &dyn SoftRobot,
    point: BackbonePoint,
    task: TaskSpace,
    target: &dyn Fn(f64) -> (DVector<f64>, DVector<f64>),
    k_e: &DMatrix<f64>,
    tau0: &DVector<f64>,
    q_guess: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<Vec<KinematicLoopSample>> {
    check_square("task gain", k_e, task.dim())?;
    let mut tau = tau0.clone();
    let mut q = solve_equilibrium(model, &tau, q_guess)?.q_bar;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let x = task.task_value(model, point, &q)?;
        out.push(KinematicLoopSample {
            t,
            tau: tau.clone(),
            q: q.clone(),
            x: x.clone(),
        });
        if k == steps {
            break;
        }
        let (x_bar, xdot_bar) = target(t);
        let je = task.select(&end_to_end_at(model, &tau, &q, point)?);
        let (inv, _) = task_inverse(&je);
        tau += inv * (k_e * (x_bar - x) + xdot_bar) * dt;
        q = solve_equilibrium(model, &tau, &q)?.q_bar;
    }
    Ok(out)
}

/// Task-space dynamics terms at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalSpace {
    /// Task inertia `(J M⁻¹ Jᵀ)⁻¹`.
    pub lambda: DMatrix<f64>,
    /// `Λ (J M⁻¹ C − J̇) q̇`.
    pub eta: DVector<f64>,
    /// Dynamically consistent pseudo-inverse transpose `Λ J M⁻¹`.
    pub jm_pinv_t: DMatrix<f64>,
    /// `(J M⁻¹ A)⁻¹ J M⁻¹`, a right inverse when the task has fewer rows than inputs.
    pub p_ma: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub jdot: DMatrix<f64>,
}

impl OperationalSpace {
    /// Input realizing the task force `f`.
    pub fn input_for(&self, f_task: &DVector<f64>) -> DVector<f64> {
        &self.p_ma * self.jacobian.transpose() * f_task
    }
}

/// Time derivative of the task Jacobian along `q̇`.
pub fn jacobian_rate(
    model: &dyn SoftRobot,
    point: BackbonePoint,
    task: TaskSpace,
    state: &RobotState,
) -> Result<DMatrix<f64>> {
    // validate once; the FD probes reuse the same point
    task.task_jacobian(model, point, &state.q)?;
    Ok(fd_directional(
        |q| {
            task.task_jacobian(model, point, q)
                .expect("point validated")
        },
        &state.q,
        &state.qdot,
        DEFAULT_FD_STEP,
    ))
}

pub fn operational_space(
    model: &dyn SoftRobot,
    state: &RobotState,
    point: BackbonePoint,
    task: TaskSpace,
) -> Result<OperationalSpace> {
    check_dim("state", model.dof(), state.dof())?;
    let q = &state.q;
    let j = task.task_jacobian(model, point, q)?;
    let m = model.mass_matrix(q);
    let minv = m.cholesky().ok_or(Error::SingularInertia)?.inverse();
    let j_minv = &j * &minv;
    let a = model.actuation_matrix(q);
    let jma = &j_minv * &a;
    let s = singular_values(&jma);
    let smax = s.first().copied().unwrap_or(0.0);
    if s.len() < task.dim() || s.iter().any(|&v| v <= PINV_RCOND * smax || v == 0.0) {
        return Err(Error::RankDeficient { singular_values: s });
    }
    let lambda_inv = &j_minv * j.transpose();
    let lambda = lambda_inv
        .cholesky()
        .ok_or_else(|| Error::RankDeficient {
            singular_values: singular_values(&j),
        })?
        .inverse();
    let jdot = jacobian_rate(model, point, task, state)?;
    let c = model.coriolis_matrix(q, &state.qdot);
    let eta = &lambda * ((&j_minv * c - &jdot) * &state.qdot);
    let jm_pinv_t = &lambda * &j_minv;
    let p_ma = pseudo_inverse(&jma, PINV_RCOND) * &j_minv;
    Ok(OperationalSpace {
        lambda,
        eta,
        jm_pinv_t,
        p_ma,
        jacobian: j,
        jdot,
    })
}

/// P-type learning update `τ_k(t) = τ_{k−1}(t) + γ e_{k−1}(t)`, per sample.
pub fn ilc_update(
    tau_prev: &[DVector<f64>],
    e_prev: &[DVector<f64>],
    gamma: &DMatrix<f64>,
) -> Result<Vec<DVector<f64>>> {
    if tau_prev.len() != e_prev.len() {
        return Err(Error::LengthMismatch {
            left: tau_prev.len(),
            right: e_prev.len(),
        });
    }
    tau_prev
        .iter()
        .zip(e_prev)
        .map(|(tau, e)| {
            check_dim("learning gain rows", tau.len(), gamma.nrows())?;
            check_dim("learning gain columns", e.len(), gamma.ncols())?;
            Ok(tau + gamma * e)
        })
        .collect()
}

/// Feedforward `τ = K(q̄) + G(q̄)` as a controller.
pub struct Feedforward {
    model: Arc<dyn SoftRobot>,
    q_bar: DVector<f64>,
    tau: DVector<f64>,
}

impl Feedforward {
    pub fn new(model: Arc<dyn SoftRobot>, q_bar: DVector<f64>) -> Result<Self> {
        let tau = ff_regulation(model.as_ref(), &q_bar)?;
        Ok(Self { model, q_bar, tau })
    }

    pub fn tau(&self) -> &DVector<f64> {
        &self.tau
    }
}

impl Controller for Feedforward {
    fn input(&self, _t: f64, _state: &RobotState) -> Result<DVector<f64>> {
        Ok(self.tau.clone())
    }

    fn lyapunov(&self, state: &RobotState) -> Option<f64> {
        lyapunov_value(self.model.as_ref(), state, &self.q_bar).ok()
    }
}

pub struct PdSetpoint {
    model: Arc<dyn SoftRobot>,
    q_bar: DVector<f64>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
}

impl PdSetpoint {
    pub fn new(
        model: Arc<dyn SoftRobot>,
        q_bar: DVector<f64>,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
    ) -> Result<Self> {
        validate_gain("alpha", &alpha)?;
        validate_gain("beta", &beta)?;
        let probe = RobotState::at_rest(q_bar.clone())?;
        pd_setpoint(model.as_ref(), &q_bar, &probe, &alpha, &beta)?;
        Ok(Self {
            model,
            q_bar,
            alpha,
            beta,
        })
    }
}

impl Controller for PdSetpoint {
    fn input(&self, _t: f64, state: &RobotState) -> Result<DVector<f64>> {
        pd_setpoint(
            self.model.as_ref(),
            &self.q_bar,
            state,
            &self.alpha,
            &self.beta,
        )
    }

    /// Feedforward Lyapunov function plus the proportional-gain energy.
    fn lyapunov(&self, state: &RobotState) -> Option<f64> {
        let e = &self.q_bar - &state.q;
        let v = lyapunov_value(self.model.as_ref(), state, &self.q_bar).ok()?;
        Some(v + 0.5 * e.dot(&(&self.alpha * &e)))
    }
}

/// Which tracking law a [`Tracking`] controller applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingLaw {
    /// Model terms on the reference.
    Feedforward,
    /// Model terms on the measured state.
    PdPlus,
}

pub struct Tracking {
    model: Arc<dyn SoftRobot>,
    reference: Arc<dyn Reference>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    law: TrackingLaw,
}

impl Tracking {
    pub fn new(
        model: Arc<dyn SoftRobot>,
        reference: Arc<dyn Reference>,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
        law: TrackingLaw,
    ) -> Result<Self> {
        validate_gain("alpha", &alpha)?;
        validate_gain("beta", &beta)?;
        let r = reference.sample(0.0);
        let probe = RobotState::new(r.q.clone(), r.qdot.clone())?;
        check_tracking(model.as_ref(), &r, &probe, &alpha, &beta)?;
        Ok(Self {
            model,
            reference,
            alpha,
            beta,
            law,
        })
    }
}

impl Controller for Tracking {
    fn input(&self, t: f64, state: &RobotState) -> Result<DVector<f64>> {
        let r = self.reference.sample(t);
        match self.law {
            TrackingLaw::Feedforward => {
                tracking_ff(self.model.as_ref(), &r, state, &self.alpha, &self.beta)
            }
            TrackingLaw::PdPlus => pd_plus(self.model.as_ref(), &r, state, &self.alpha, &self.beta),
        }
    }
}

/// Underactuated regulation; zero gains give the pure feedforward law.
pub struct UnderactuatedPd {
    model: Arc<dyn SoftRobot>,
    q_bar: DVector<f64>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    tau_ff: DVector<f64>,
    a_bar: DMatrix<f64>,
}

impl UnderactuatedPd {
    pub fn new(
        model: Arc<dyn SoftRobot>,
        q_bar: DVector<f64>,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
    ) -> Result<Self> {
        validate_gain("alpha", &alpha)?;
        validate_gain("beta", &beta)?;
        let m = model.inputs();
        check_square("alpha", &alpha, m)?;
        check_square("beta", &beta, m)?;
        let tau_ff = ua_feedforward(model.as_ref(), &q_bar)?;
        let a_bar = model.actuation_matrix(&q_bar);
        Ok(Self {
            model,
            q_bar,
            alpha,
            beta,
            tau_ff,
            a_bar,
        })
    }

    pub fn feedforward(model: Arc<dyn SoftRobot>, q_bar: DVector<f64>) -> Result<Self> {
        let m = model.inputs();
        Self::new(model, q_bar, DMatrix::zeros(m, m), DMatrix::zeros(m, m))
    }
}

impl Controller for UnderactuatedPd {
    fn input(&self, _t: f64, state: &RobotState) -> Result<DVector<f64>> {
        check_dim("state", self.model.dof(), state.dof())?;
        let at = self.a_bar.transpose();
        Ok(
            &self.tau_ff + &self.alpha * (&at * (&self.q_bar - &state.q))
                - &self.beta * (&at * &state.qdot),
        )
    }

    fn lyapunov(&self, state: &RobotState) -> Option<f64> {
        let e = &self.q_bar - &state.q;
        let v = lyapunov_value(self.model.as_ref(), state, &self.q_bar).ok()?;
        let ae = self.a_bar.transpose() * &e;
        Some(v + 0.5 * ae.dot(&(&self.alpha * &ae)))
    }
}

/// Task-space target and its rate as functions of time.
pub type TaskTarget = Arc<dyn Fn(f64) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

/// Kinematic task law realized through a joint-velocity inner loop:
/// `τ = K + G + (C + D) q̇ + M K_v (q̇_cmd − q̇)` on the measured state.
pub struct KinematicTaskController {
    model: Arc<dyn SoftRobot>,
    point: BackbonePoint,
    task: TaskSpace,
    target: TaskTarget,
    k_e: DMatrix<f64>,
    k_v: DMatrix<f64>,
}

impl KinematicTaskController {
    pub fn new(
        model: Arc<dyn SoftRobot>,
        point: BackbonePoint,
        task: TaskSpace,
        target: TaskTarget,
        k_e: DMatrix<f64>,
        k_v: DMatrix<f64>,
    ) -> Result<Self> {
        validate_gain("task gain", &k_e)?;
        validate_gain("inner-loop gain", &k_v)?;
        check_square("task gain", &k_e, task.dim())?;
        check_square("inner-loop gain", &k_v, model.dof())?;
        require_identity_actuation(model.as_ref(), &DVector::zeros(model.dof()))?;
        model.pose(point, &DVector::zeros(model.dof()))?;
        Ok(Self {
            model,
            point,
            task,
            target,
            k_e,
            k_v,
        })
    }
}

/// A constant task target.
pub fn fixed_target(x_bar: DVector<f64>) -> TaskTarget {
    let zero = DVector::zeros(x_bar.len());
    Arc::new(move |_t| (x_bar.clone(), zero.clone()))
}

impl Controller for KinematicTaskController {
    fn input(&self, t: f64, state: &RobotState) -> Result<DVector<f64>> {
        let model = self.model.as_ref();
        let (x_bar, xdot_bar) = (self.target)(t);
        let cmd = kinematic_task(
            model, self.point, self.task, &x_bar, &xdot_bar, &state.q, &self.k_e,
        )?;
        let q = &state.q;
        let comp = model.potential_force(q)
            + (model.coriolis_matrix(q, &state.qdot) + model.damping_matrix(q)) * &state.qdot;
        Ok(comp + model.mass_matrix(q) * (&self.k_v * (cmd.qdot - &state.qdot)))
    }
}

/// Task-space feedback linearization towards a fixed target:
/// `f = Λ(K_p(x̄ − x) − K_d ẋ) + η + Λ J M⁻¹ (G + K + D q̇)`, `τ = P_MA Jᵀ f`.
pub struct OperationalSpaceController {
    model: Arc<dyn SoftRobot>,
    point: BackbonePoint,
    task: TaskSpace,
    x_bar: DVector<f64>,
    kp: DMatrix<f64>,
    kd: DMatrix<f64>,
}

impl OperationalSpaceController {
    pub fn new(
        model: Arc<dyn SoftRobot>,
        point: BackbonePoint,
        task: TaskSpace,
        x_bar: DVector<f64>,
        kp: DMatrix<f64>,
        kd: DMatrix<f64>,
    ) -> Result<Self> {
        let d = task.dim();
        check_dim("task target", d, x_bar.len())?;
        validate_gain("kp", &kp)?;
        validate_gain("kd", &kd)?;
        check_square("kp", &kp, d)?;
        check_square("kd", &kd, d)?;
        model.pose(point, &DVector::zeros(model.dof()))?;
        Ok(Self {
            model,
            point,
            task,
            x_bar,
            kp,
            kd,
        })
    }

    /// Task force the law requests at `state`.
    pub fn task_force(&self, state: &RobotState, os: &OperationalSpace) -> Result<DVector<f64>> {
        let model = self.model.as_ref();
        let x = self.task.task_value(model, self.point, &state.q)?;
        let xdot = &os.jacobian * &state.qdot;
        let bias = model.potential_force(&state.q) + model.damping_matrix(&state.q) * &state.qdot;
        Ok(
            &os.lambda * (&self.kp * (&self.x_bar - x) - &self.kd * xdot)
                + &os.eta
                + &os.jm_pinv_t * bias,
        )
    }
}

impl Controller for OperationalSpaceController {
    fn input(&self, _t: f64, state: &RobotState) -> Result<DVector<f64>> {
        let os = operational_space(self.model.as_ref(), state, self.point, self.task)?;
        let f = self.task_force(state, &os)?;
        Ok(os.input_for(&f))
    }
}

/// Replays a sampled input trace, interpolating linearly between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePlayback {
    pub dt: f64,
    pub trace: Vec<DVector<f64>>,
}

impl Controller for TracePlayback {
    fn input(&self, t: f64, _state: &RobotState) -> Result<DVector<f64>> {
        let last = self
            .trace
            .len()
            .checked_sub(1)
            .ok_or(Error::LengthMismatch { left: 0, right: 1 })?;
        let pos = (t / self.dt).max(0.0);
        let k = (pos.floor() as usize).min(last);
        if k == last {
            return Ok(self.trace[last].clone());
        }
        let w = pos - k as f64;
        Ok(&self.trace[k] * (1.0 - w) + &self.trace[k + 1] * w)
    }
}

/// Outcome of one learning iteration.
#[derive(Debug, Clone)]
pub struct IlcIteration {
    pub trajectory: Trajectory,
    pub rms_error: f64,
}

/// Repeated trials of the same reference with P-type learning between them.
pub struct IlcExperiment {
    model: Arc<dyn SoftRobot>,
    reference: Arc<dyn Reference>,
    gamma: DMatrix<f64>,
    simulator: Simulator,
    trace: Vec<DVector<f64>>,
    iterations: usize,
}

impl IlcExperiment {
    /// `gamma` maps configuration errors (n) to inputs (m). The first trial
    /// plays a zero input.
    pub fn new(
        model: Arc<dyn SoftRobot>,
        reference: Arc<dyn Reference>,
        gamma: DMatrix<f64>,
        simulator: Simulator,
    ) -> Result<Self> {
        simulator.validate()?;
        if simulator.hold_period.is_some() {
            return Err(Error::InvalidParameter {
                name: "hold_period",
                value: simulator.hold_period.unwrap_or(0.0),
                reason: "learning replays sampled traces; hold mode is not supported",
            });
        }
        check_dim("reference", model.dof(), reference.dof())?;
        check_dim("learning gain rows", model.inputs(), gamma.nrows())?;
        check_dim("learning gain columns", model.dof(), gamma.ncols())?;
        let trace = vec![DVector::zeros(model.inputs()); simulator.steps() + 1];
        Ok(Self {
            model,
            reference,
            gamma,
            simulator,
            trace,
            iterations: 0,
        })
    }

    pub fn trace(&self) -> &[DVector<f64>] {
        &self.trace
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Runs one trial from the reference's initial state and learns from it.
    pub fn run_iteration(&mut self) -> Result<IlcIteration> {
        let r0 = self.reference.sample(0.0);
        let initial = RobotState::new(r0.q, r0.qdot)?;
        let playback = TracePlayback {
            dt: self.simulator.dt,
            trace: self.trace.clone(),
        };
        let trajectory = self
            .simulator
            .run(self.model.as_ref(), &playback, &initial, &[])?;
        let errors: Vec<DVector<f64>> = trajectory
            .times
            .iter()
            .zip(&trajectory.states)
            .map(|(&t, s)| self.reference.sample(t).q - &s.q)
            .collect();
        let rms_error =
            (errors.iter().map(|e| e.norm_squared()).sum::<f64>() / errors.len() as f64).sqrt();
        self.trace = ilc_update(&self.trace, &errors, &self.gamma)?;
        self.iterations += 1;
        Ok(IlcIteration {
            trajectory,
            rms_error,
        })
    }
}

/// A reference signal by value.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    Constant { q: DVector<f64> },
    Sinusoid(SinusoidReference),
}

impl ReferenceSpec {
    pub fn build(&self) -> Arc<dyn Reference> {
        match self {
            ReferenceSpec::Constant { q } => Arc::new(ConstantReference { q: q.clone() }),
            ReferenceSpec::Sinusoid(s) => Arc::new(s.clone()),
        }
    }
}

/// A controller choice with its gains and references.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    Constant {
        tau: DVector<f64>,
    },
    Feedforward {
        q_bar: DVector<f64>,
    },
    PdSetpoint {
        q_bar: DVector<f64>,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
    },
    TrackingFf {
        reference: ReferenceSpec,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
    },
    PdPlus {
        reference: ReferenceSpec,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
    },
    UaFeedforward {
        q_bar: DVector<f64>,
    },
    UaPd {
        q_bar: DVector<f64>,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
    },
    KinematicTask {
        point: BackbonePoint,
        task: TaskSpace,
        x_bar: DVector<f64>,
        k_e: DMatrix<f64>,
        k_v: DMatrix<f64>,
    },
    OperationalSpace {
        point: BackbonePoint,
        task: TaskSpace,
        x_bar: DVector<f64>,
        kp: DMatrix<f64>,
        kd: DMatrix<f64>,
    },
    /// Run through [`IlcExperiment`] rather than as a single controller.
    Ilc {
        reference: ReferenceSpec,
        gamma: DMatrix<f64>,
        iterations: usize,
    },
}

impl ControllerSpec {
    /// Set-point of regulation laws.
    pub fn set_point(&self) -> Option<&DVector<f64>> {
        match self {
            ControllerSpec::Feedforward { q_bar }
            | ControllerSpec::PdSetpoint { q_bar, .. }
            | ControllerSpec::UaFeedforward { q_bar }
            | ControllerSpec::UaPd { q_bar, .. } => Some(q_bar),
            _ => None,
        }
    }

    pub fn reference(&self) -> Option<&ReferenceSpec> {
        match self {
            ControllerSpec::TrackingFf { reference, .. }
            | ControllerSpec::PdPlus { reference, .. }
            | ControllerSpec::Ilc { reference, .. } => Some(reference),
            _ => None,
        }
    }

    pub fn build(&self, model: Arc<dyn SoftRobot>) -> Result<Box<dyn Controller>> {
        Ok(match self {
            ControllerSpec::Constant { tau } => {
                check_dim("constant input", model.inputs(), tau.len())?;
                Box::new(crate::sim::ConstantInput::new(tau.clone()))
            }
            ControllerSpec::Feedforward { q_bar } => {
                Box::new(Feedforward::new(model, q_bar.clone())?)
            }
            ControllerSpec::PdSetpoint { q_bar, alpha, beta } => Box::new(PdSetpoint::new(
                model,
                q_bar.clone(),
                alpha.clone(),
                beta.clone(),
            )?),
            ControllerSpec::TrackingFf {
                reference,
                alpha,
                beta,
            } => Box::new(Tracking::new(
                model,
                reference.build(),
                alpha.clone(),
                beta.clone(),
                TrackingLaw::Feedforward,
            )?),
            ControllerSpec::PdPlus {
                reference,
                alpha,
                beta,
            } => Box::new(Tracking::new(
                model,
                reference.build(),
                alpha.clone(),
                beta.clone(),
                TrackingLaw::PdPlus,
            )?),
            ControllerSpec::UaFeedforward { q_bar } => {
                Box::new(UnderactuatedPd::feedforward(model, q_bar.clone())?)
            }
            ControllerSpec::UaPd { q_bar, alpha, beta } => Box::new(UnderactuatedPd::new(
                model,
                q_bar.clone(),
                alpha.clone(),
                beta.clone(),
            )?),
            ControllerSpec::KinematicTask {
                point,
                task,
                x_bar,
                k_e,
                k_v,
            } => {
                check_dim("task target", task.dim(), x_bar.len())?;
                Box::new(KinematicTaskController::new(
                    model,
                    *point,
                    *task,
                    fixed_target(x_bar.clone()),
                    k_e.clone(),
                    k_v.clone(),
                )?)
            }
            ControllerSpec::OperationalSpace {
                point,
                task,
                x_bar,
                kp,
                kd,
            } => Box::new(OperationalSpaceController::new(
                model,
                *point,
                *task,
                x_bar.clone(),
                kp.clone(),
                kd.clone(),
            )?),
            ControllerSpec::Ilc { .. } => {
                return Err(Error::InvalidParameter {
                    name: "controller",
                    value: f64::NAN,
                    reason: "learning control runs as an experiment, not a single controller",
                })
            }
        })
    }
}

/// Stiffness of the closed loop at `q̄` under proportional feedback `α`
/// collocated with the inputs.
pub fn closed_loop_stiffness(
    model: &dyn SoftRobot,
    q_bar: &DVector<f64>,
    alpha: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let tau = ua_feedforward(model, q_bar)?;
    effective_stiffness(model, &tau, q_bar, Some(alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{classify_stability, static_residual, Verdict};
    use crate::cc::{gravity_cc, jacobian_cc, CcSegment, Gravity, SegmentParams};
    use crate::chain::{ActuationPattern, Actuator, ChainParams, PccChain};
    use crate::sim::{accel, simulate, ConstantInput};
    use rand::{rngs::StdRng, Rng, SeedableRng};
    use std::f64::consts::PI;

    fn cc(k: f64, phi: f64) -> Arc<dyn SoftRobot> {
        Arc::new(
            CcSegment::new(
                SegmentParams::new(0.5, 0.25, k, 0.01).unwrap(),
                Gravity::new(9.81, phi).unwrap(),
            )
            .unwrap(),
        )
    }

    fn chain(n: usize, actuation: ActuationPattern) -> Arc<dyn SoftRobot> {
        let seg = SegmentParams::new(0.2, 0.15, 0.2, 0.02).unwrap();
        Arc::new(
            PccChain::new(ChainParams {
                segments: vec![seg; n],
                gravity: Gravity::new(9.81, 0.3).unwrap(),
                actuation,
            })
            .unwrap(),
        )
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn random_state(rng: &mut StdRng, n: usize) -> RobotState {
        RobotState::new(
            DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
            DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
        )
        .unwrap()
    }

    #[test]
    fn feedforward_values() {
        let model = cc(0.05, 0.0);
        assert_eq!(ff_regulation(model.as_ref(), &v1(0.0)).unwrap()[0], 0.0);
        let q = PI / 4.0;
        let tau = ff_regulation(model.as_ref(), &v1(q)).unwrap()[0];
        let expected = 0.05 * q + gravity_cc(q, 0.0, 0.5, 9.81, 0.25);
        assert!((tau - expected).abs() < 1e-15);
    }

    #[test]
    fn fully_actuated_laws_reject_underactuation() {
        let model = chain(
            2,
            ActuationPattern::actuators(vec![Actuator::Constant {
                column: vec![1.0, 1.0],
            }]),
        );
        assert!(matches!(
            ff_regulation(model.as_ref(), &DVector::zeros(2)),
            Err(Error::NotFullyActuated { dof: 2, inputs: 1 })
        ));
    }

    #[test]
    fn physical_p_loop_identity() {
        let model = chain(2, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let mut rng = StdRng::seed_from_u64(11);
        let q_bar = DVector::from_row_slice(&[0.4, -0.2]);
        let tau = ff_regulation(m, &q_bar).unwrap();
        for _ in 0..20 {
            let s = random_state(&mut rng, 2);
            let lhs = (m.potential_force(&q_bar) - m.potential_force(&s.q))
                - m.damping_matrix(&s.q) * &s.qdot;
            let rhs = m.actuation_matrix(&s.q) * &tau
                - (m.potential_force(&s.q) + m.damping_matrix(&s.q) * &s.qdot);
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn degenerate_gain_collapse() {
        let model = chain(2, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let mut rng = StdRng::seed_from_u64(5);
        let q_bar = DVector::from_row_slice(&[0.3, 0.6]);
        let alpha = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let beta = DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 0.02]);
        let zero = DMatrix::zeros(2, 2);
        let constant = ConstantReference { q: q_bar.clone() }.sample(0.7);
        for _ in 0..20 {
            let s = random_state(&mut rng, 2);
            assert_eq!(
                ua_pd(m, &q_bar, &s, &alpha, &beta).unwrap(),
                pd_setpoint(m, &q_bar, &s, &alpha, &beta).unwrap()
            );
            assert_eq!(
                pd_setpoint(m, &q_bar, &s, &zero, &zero).unwrap(),
                ff_regulation(m, &q_bar).unwrap()
            );
            // the reference velocity is zero, so the damping feedforward adds nothing
            let tracking = tracking_ff(m, &constant, &s, &alpha, &beta).unwrap();
            let expected = pd_setpoint(m, &q_bar, &s, &alpha, &beta).unwrap()
                + m.damping_matrix(&s.q) * &constant.qdot;
            assert!((tracking - expected).amax() < 1e-15);
        }
    }

    #[test]
    fn setpoint_laws_hold_their_target() {
        let model = chain(3, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let q_bar = DVector::from_row_slice(&[0.3, -0.5, 0.9]);
        let rest = RobotState::at_rest(q_bar.clone()).unwrap();
        let gain = DMatrix::identity(3, 3);
        for tau in [
            ff_regulation(m, &q_bar).unwrap(),
            pd_setpoint(m, &q_bar, &rest, &gain, &gain).unwrap(),
            ua_pd(m, &q_bar, &rest, &gain, &gain).unwrap(),
        ] {
            assert_eq!(static_residual(m, &tau, &q_bar).amax(), 0.0);
        }
    }

    #[test]
    fn feedforward_settles_at_target() {
        let model = cc(0.05, 0.0);
        let target = v1(PI / 4.0);
        let ctrl = Feedforward::new(model.clone(), target.clone()).unwrap();
        let traj = simulate(
            model.as_ref(),
            &ctrl,
            &RobotState::at_rest(v1(0.0)).unwrap(),
            20.0,
            1e-3,
            &[],
        )
        .unwrap();
        assert!((traj.last_state().q[0] - PI / 4.0).abs() < 1e-4);
        let v = traj.lyapunov.unwrap();
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }

    #[test]
    fn feedforward_upright_diverges_and_feedback_recovers() {
        let model = cc(0.05, PI);
        let q_bar = v1(0.0);
        let start = RobotState::at_rest(v1(1e-3)).unwrap();
        let ff = Feedforward::new(model.clone(), q_bar.clone()).unwrap();
        let traj = simulate(model.as_ref(), &ff, &start, 5.0, 1e-3, &[]).unwrap();
        assert!(traj.last_state().q[0].abs() > 1e-2);
        let margin = 0.5 * 9.81 * 0.25 / 12.0 - 0.05;
        let pd = PdSetpoint::new(model.clone(), q_bar, m1(2.0 * margin), m1(0.02)).unwrap();
        let traj = simulate(model.as_ref(), &pd, &start, 20.0, 1e-3, &[]).unwrap();
        assert!(traj.last_state().q[0].abs() < 1e-4);
        let v = traj.lyapunov.unwrap();
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }

    #[test]
    fn tracking_with_high_gains() {
        let k = 0.05;
        let model = cc(k, 0.0);
        let reference = Arc::new(SinusoidReference::uniform(1, 0.0, 0.5, 1.0, 0.0));
        let ctrl = Tracking::new(
            model.clone(),
            reference.clone(),
            m1(10.0 * k),
            m1(10.0 * k),
            TrackingLaw::Feedforward,
        )
        .unwrap();
        let traj = simulate(
            model.as_ref(),
            &ctrl,
            &RobotState::at_rest(v1(0.0)).unwrap(),
            15.0,
            1e-3,
            &[],
        )
        .unwrap();
        let tail: Vec<f64> = traj
            .times
            .iter()
            .zip(&traj.states)
            .filter(|(t, _)| **t >= 5.0)
            .map(|(&t, s)| (reference.sample(t).q[0] - s.q[0]).powi(2))
            .collect();
        let rms = (tail.iter().sum::<f64>() / tail.len() as f64).sqrt();
        assert!(rms < 0.01 * 0.5, "rms {rms}");
    }

    #[test]
    fn pd_plus_cancels_reference_dynamics() {
        let model = chain(2, ActuationPattern::TipTorquePerSegment);
        let reference = Arc::new(
            SinusoidReference::new(
                vec![0.2, -0.1],
                vec![0.5, 0.3],
                vec![2.0, 3.0],
                vec![0.0, 1.0],
            )
            .unwrap(),
        );
        let zero = DMatrix::zeros(2, 2);
        let ctrl = Tracking::new(
            model.clone(),
            reference.clone(),
            zero.clone(),
            zero,
            TrackingLaw::PdPlus,
        )
        .unwrap();
        let r0 = reference.sample(0.0);
        let traj = simulate(
            model.as_ref(),
            &ctrl,
            &RobotState::new(r0.q, r0.qdot).unwrap(),
            2.0,
            1e-3,
            &[],
        )
        .unwrap();
        let worst = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, s)| (reference.sample(t).q - &s.q).amax())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "worst {worst}");
    }

    #[test]
    fn pd_plus_with_model_mismatch() {
        // the real stiffness is 20 % above the modelled one
        let plant = cc(0.06, 0.0);
        let believed = cc(0.05, 0.0);
        let reference = Arc::new(ConstantReference { q: v1(0.6) });
        let run = |alpha: f64| {
            let ctrl = Tracking::new(
                believed.clone(),
                reference.clone(),
                m1(alpha),
                m1(0.02),
                TrackingLaw::PdPlus,
            )
            .unwrap();
            let traj = simulate(
                plant.as_ref(),
                &ctrl,
                &RobotState::at_rest(v1(0.6)).unwrap(),
                20.0,
                1e-3,
                &[],
            )
            .unwrap();
            (0.6 - traj.last_state().q[0]).abs()
        };
        let open = run(0.0);
        let closed = run(5.0);
        assert!(open > 1e-3 && open.is_finite());
        assert!(closed < 0.05 * open);
    }

    #[test]
    fn underactuated_feedforward_round_trip() {
        let model = chain(
            2,
            ActuationPattern::actuators(vec![Actuator::Constant {
                column: vec![1.0, 1.0],
            }]),
        );
        let m = model.as_ref();
        let tau = v1(0.07);
        let q_bar = solve_equilibrium(m, &tau, &DVector::zeros(2))
            .unwrap()
            .q_bar;
        assert!((ua_feedforward(m, &q_bar).unwrap() - &tau).amax() < 1e-10);
        assert!(matches!(
            ua_feedforward(m, &DVector::from_row_slice(&[0.5, -0.5])),
            Err(Error::UnattainableEquilibrium { .. })
        ));
    }

    #[test]
    fn underactuated_pd_converges_when_stiffness_positive() {
        let soft = SegmentParams::new(0.3, 0.2, 0.1, 0.02).unwrap();
        let upright = |column: Vec<f64>| -> Arc<dyn SoftRobot> {
            Arc::new(
                PccChain::new(ChainParams {
                    segments: vec![soft, soft],
                    gravity: Gravity::new(9.81, PI).unwrap(),
                    actuation: ActuationPattern::actuators(vec![Actuator::Constant { column }]),
                })
                .unwrap(),
            )
        };
        let q_bar = DVector::zeros(2);
        let probe = upright(vec![1.0, 0.0]);
        assert_eq!(
            classify_stability(probe.as_ref(), &q_bar, None)
                .unwrap()
                .verdict,
            Verdict::Unstable
        );
        let eig = crate::analysis::config_stiffness(probe.as_ref(), &q_bar)
            .unwrap()
            .symmetric_eigen();
        let (imin, _) = eig.eigenvalues.argmin();
        let u = eig.eigenvectors.column(imin).into_owned();
        let start = RobotState::at_rest(DVector::from_row_slice(&[1e-3, -2e-3])).unwrap();

        let collocated = upright(u.iter().copied().collect());
        let ctrl =
            UnderactuatedPd::new(collocated.clone(), q_bar.clone(), m1(2.0), m1(0.05)).unwrap();
        assert!(
            closed_loop_stiffness(collocated.as_ref(), &q_bar, &m1(2.0))
                .unwrap()
                .symmetric_eigenvalues()
                .min()
                > 0.0
        );
        let traj = simulate(collocated.as_ref(), &ctrl, &start, 20.0, 1e-3, &[]).unwrap();
        assert!(traj.last_state().q.norm() < 1e-4);

        let orthogonal = upright(vec![-u[1], u[0]]);
        for gain in [2.0, 200.0] {
            let ctrl = UnderactuatedPd::new(orthogonal.clone(), q_bar.clone(), m1(gain), m1(0.05))
                .unwrap();
            let traj = simulate(orthogonal.as_ref(), &ctrl, &start, 3.0, 1e-4, &[]).unwrap();
            assert!(
                traj.last_state().q.norm() > 10.0 * start.q.norm(),
                "gain {gain}"
            );
        }
    }

    #[test]
    fn kinematic_law_basics() {
        let model = chain(3, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let tip = BackbonePoint::tip_of(2);
        let q = DVector::from_row_slice(&[0.4, 0.3, -0.2]);
        let x = TaskSpace::Position.task_value(m, tip, &q).unwrap();
        let ke = DMatrix::identity(2, 2) * 2.0;
        let cmd =
            kinematic_task(m, tip, TaskSpace::Position, &x, &DVector::zeros(2), &q, &ke).unwrap();
        assert!(cmd.qdot.norm() < 1e-15 && !cmd.damped);
        // redundant task: the command has no null-space component
        let target = &x + DVector::from_row_slice(&[0.01, -0.02]);
        let cmd = kinematic_task(
            m,
            tip,
            TaskSpace::Position,
            &target,
            &DVector::zeros(2),
            &q,
            &ke,
        )
        .unwrap();
        let j = TaskSpace::Position.task_jacobian(m, tip, &q).unwrap();
        let null = DMatrix::identity(3, 3) - pseudo_inverse(&j, PINV_RCOND) * &j;
        assert!((null * &cmd.qdot).norm() < 1e-12 * cmd.qdot.norm());
    }

    #[test]
    fn kinematic_law_damps_singularities() {
        // a straight chain cannot move its tip along its own axis
        let model = chain(3, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let tip = BackbonePoint::tip_of(2);
        let ke = DMatrix::identity(2, 2);
        let far = DVector::from_row_slice(&[1.0, 0.0]);
        let cmd = kinematic_task(
            m,
            tip,
            TaskSpace::Position,
            &far,
            &DVector::zeros(2),
            &DVector::zeros(3),
            &ke,
        )
        .unwrap();
        assert!(cmd.damped);
        assert!(cmd.qdot.iter().all(|v| v.is_finite()));
        let bent = DVector::from_row_slice(&[0.4, 0.3, -0.2]);
        let cmd = kinematic_task(
            m,
            tip,
            TaskSpace::Position,
            &far,
            &DVector::zeros(2),
            &bent,
            &ke,
        )
        .unwrap();
        assert!(!cmd.damped);
        // a pose task on fewer joints than task rows
        let (_, damped) = task_inverse(
            &TaskSpace::Pose
                .task_jacobian(cc(0.05, 0.0).as_ref(), BackbonePoint::tip_of(0), &v1(0.5))
                .unwrap(),
        );
        assert!(damped);
    }

    #[test]
    fn kinematic_error_decays_exponentially() {
        let model = chain(3, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let tip = BackbonePoint::tip_of(2);
        let ke_scalar = 2.0;
        let ke = DMatrix::identity(2, 2) * ke_scalar;
        let mut q = DVector::from_row_slice(&[0.4, 0.3, -0.2]);
        let target = TaskSpace::Position.task_value(m, tip, &q).unwrap()
            + DVector::from_row_slice(&[0.01, -0.02]);
        let err = |q: &DVector<f64>| {
            (&target - TaskSpace::Position.task_value(m, tip, q).unwrap()).norm()
        };
        let e0 = err(&q);
        let (dt, steps) = (1e-3, 500);
        let f = |q: &DVector<f64>| {
            kinematic_task(
                m,
                tip,
                TaskSpace::Position,
                &target,
                &DVector::zeros(2),
                q,
                &ke,
            )
            .unwrap()
            .qdot
        };
        for _ in 0..steps {
            let k1 = f(&q);
            let k2 = f(&(&q + &k1 * (0.5 * dt)));
            let k3 = f(&(&q + &k2 * (0.5 * dt)));
            let k4 = f(&(&q + &k3 * dt));
            q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        let ratio = err(&q) / e0;
        let expected = (-ke_scalar * dt * steps as f64).exp();
        assert!((ratio - expected).abs() < 1e-3, "{ratio} vs {expected}");
    }

    #[test]
    fn kinematic_controller_reaches_target() {
        let model = chain(3, ActuationPattern::TipTorquePerSegment);
        let tip = BackbonePoint::tip_of(2);
        let q0 = DVector::from_row_slice(&[0.4, 0.3, -0.2]);
        let target = TaskSpace::Position
            .task_value(model.as_ref(), tip, &q0)
            .unwrap()
            + DVector::from_row_slice(&[0.01, -0.02]);
        let ctrl = KinematicTaskController::new(
            model.clone(),
            tip,
            TaskSpace::Position,
            fixed_target(target.clone()),
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::identity(3, 3) * 50.0,
        )
        .unwrap();
        let traj = simulate(
            model.as_ref(),
            &ctrl,
            &RobotState::at_rest(q0).unwrap(),
            5.0,
            1e-3,
            &[],
        )
        .unwrap();
        let x = TaskSpace::Position
            .task_value(model.as_ref(), tip, &traj.last_state().q)
            .unwrap();
        assert!((x - target).norm() < 1e-5);
    }

    #[test]
    fn end_to_end_scalar_and_fd() {
        let model = cc(0.05, 0.0);
        let m = model.as_ref();
        let tip = BackbonePoint::tip_of(0);
        let tau = v1(-0.1);
        let e2e = end_to_end_jacobian(m, &tau, &v1(0.0), tip).unwrap();
        let q = e2e.q_bar[0];
        let stiffness = crate::analysis::config_stiffness(m, &e2e.q_bar).unwrap()[(0, 0)];
        let j = jacobian_cc(1.0, q, 0.25);
        for r in 0..3 {
            assert!((e2e.jacobian[(r, 0)] - j[r] / stiffness).abs() < 1e-8 * j[r].abs().max(1.0));
        }
        let h = 1e-5;
        let tip_at = |t: f64| {
            let q = solve_equilibrium(m, &v1(t), &e2e.q_bar).unwrap().q_bar;
            m.pose(tip, &q).unwrap().to_dvector()
        };
        let fd = (tip_at(tau[0] + h) - tip_at(tau[0] - h)) / (2.0 * h);
        assert!((&fd - e2e.jacobian.column(0)).norm() < 1e-4 * fd.norm());
    }

    #[test]
    fn end_to_end_rank_with_two_inputs() {
        let model = chain(
            3,
            ActuationPattern::actuators(vec![
                Actuator::Constant {
                    column: vec![1.0, 0.0, 0.0],
                },
                Actuator::Constant {
                    column: vec![0.0, 1.0, 1.0],
                },
            ]),
        );
        let e2e = end_to_end_jacobian(
            model.as_ref(),
            &DVector::from_row_slice(&[0.05, -0.03]),
            &DVector::zeros(3),
            BackbonePoint::tip_of(2),
        )
        .unwrap();
        let rows = TaskSpace::Position.select(&e2e.jacobian);
        assert_eq!(rows.shape(), (2, 2));
        assert_eq!(crate::numerics::rank(&rows), 2);
    }

    #[test]
    fn underactuated_kinematic_loop_converges() {
        let model = chain(
            3,
            ActuationPattern::actuators(vec![
                Actuator::Constant {
                    column: vec![1.0, 0.0, 0.0],
                },
                Actuator::Constant {
                    column: vec![0.0, 1.0, 1.0],
                },
            ]),
        );
        let m = model.as_ref();
        let tip = BackbonePoint::tip_of(2);
        // a target known to be reachable: the tip under some other input
        let goal_q = solve_equilibrium(
            m,
            &DVector::from_row_slice(&[0.08, 0.04]),
            &DVector::zeros(3),
        )
        .unwrap()
        .q_bar;
        let goal = TaskSpace::Position.task_value(m, tip, &goal_q).unwrap();
        let target = move |_t: f64| (goal.clone(), DVector::zeros(2));
        let samples = underactuated_kinematic_loop(
            m,
            tip,
            TaskSpace::Position,
            &target,
            &(DMatrix::identity(2, 2) * 5.0),
            &DVector::zeros(2),
            &DVector::zeros(3),
            0.01,
            300,
        )
        .unwrap();
        let goal = target(0.0).0;
        let e0 = (&goal - &samples[0].x).norm();
        let e1 = (&goal - &samples.last().unwrap().x).norm();
        assert!(e1 < 1e-4 * e0, "{e0} -> {e1}");
    }

    #[test]
    fn operational_space_consistency() {
        let model = chain(3, ActuationPattern::TipTorquePerSegment);
        let m = model.as_ref();
        let tip = BackbonePoint::tip_of(2);
        let state = RobotState::new(
            DVector::from_row_slice(&[0.5, -0.3, 0.8]),
            DVector::from_row_slice(&[0.7, -1.1, 0.4]),
        )
        .unwrap();
        let os = operational_space(m, &state, tip, TaskSpace::Position).unwrap();
        let f = DVector::from_row_slice(&[0.3, -0.2]);
        let tau = os.input_for(&f);
        let qdd = accel(m, &state, &tau, &[]).unwrap();
        let xdd = &os.jacobian * qdd + &os.jdot * &state.qdot;
        let bias = m.potential_force(&state.q) + m.damping_matrix(&state.q) * &state.qdot;
        let expected =
            os.lambda.clone().try_inverse().unwrap() * (&f - &os.eta - &os.jm_pinv_t * bias);
        assert!((xdd - &expected).norm() < 1e-6 * expected.norm());

        let rest = RobotState::at_rest(state.q.clone()).unwrap();
        let os0 = operational_space(m, &rest, tip, TaskSpace::Position).unwrap();
        assert_eq!(os0.input_for(&DVector::zeros(2)), DVector::zeros(3));
    }

    #[test]
    fn jacobian_rate_matches_analytic() {
        let model = cc(0.05, 0.0);
        let (q, qd, l) = (0.9, 1.7, 0.25);
        let state = RobotState::new(v1(q), v1(qd)).unwrap();
        let jdot = jacobian_rate(
            model.as_ref(),
            BackbonePoint::tip_of(0),
            TaskSpace::Pose,
            &state,
        )
        .unwrap();
        // second derivatives of sin(u)/u and (1 − cos u)/u
        let sinc2 = ((2.0 - q * q) * q.sin() - 2.0 * q * q.cos()) / q.powi(3);
        let vers2 = (q * q * q.cos() - 2.0 * q * q.sin() + 2.0 - 2.0 * q.cos()) / q.powi(3);
        assert!((jdot[(0, 0)] - l * sinc2 * qd).abs() < 1e-5);
        assert!((jdot[(1, 0)] - l * vers2 * qd).abs() < 1e-5);
        assert!(jdot[(2, 0)].abs() < 1e-5);
    }

    #[test]
    fn operational_space_controller_reaches_target() {
        let model = chain(2, ActuationPattern::TipTorquePerSegment);
        let tip = BackbonePoint::tip_of(1);
        let q0 = DVector::from_row_slice(&[0.5, 0.4]);
        let x0 = TaskSpace::Position
            .task_value(model.as_ref(), tip, &q0)
            .unwrap();
        let target = &x0 + DVector::from_row_slice(&[-0.005, 0.01]);
        let ctrl = OperationalSpaceController::new(
            model.clone(),
            tip,
            TaskSpace::Position,
            target.clone(),
            DMatrix::identity(2, 2) * 25.0,
            DMatrix::identity(2, 2) * 10.0,
        )
        .unwrap();
        let traj = simulate(
            model.as_ref(),
            &ctrl,
            &RobotState::at_rest(q0).unwrap(),
            3.0,
            1e-3,
            &[],
        )
        .unwrap();
        let x = TaskSpace::Position
            .task_value(model.as_ref(), tip, &traj.last_state().q)
            .unwrap();
        assert!((x - target).norm() < 1e-5);
    }

    #[test]
    fn operational_space_rank_check() {
        let model = chain(2, ActuationPattern::TipTorquePerSegment);
        let straight = RobotState::at_rest(DVector::zeros(2)).unwrap();
        assert!(matches!(
            operational_space(
                model.as_ref(),
                &straight,
                BackbonePoint::tip_of(1),
                TaskSpace::Pose
            ),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn ilc_update_rules() {
        let tau = vec![v1(1.0), v1(2.0)];
        assert_eq!(
            ilc_update(&tau, &[v1(0.0), v1(0.0)], &m1(0.5)).unwrap(),
            tau
        );
        assert_eq!(
            ilc_update(&tau, &[v1(3.0), v1(-1.0)], &m1(0.0)).unwrap(),
            tau
        );
        assert_eq!(
            ilc_update(&tau, &[v1(2.0), v1(-2.0)], &m1(0.5)).unwrap(),
            vec![v1(2.0), v1(1.0)]
        );
        assert!(matches!(
            ilc_update(&tau, &[v1(0.0)], &m1(0.5)),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn playback_interpolates() {
        let p = TracePlayback {
            dt: 0.1,
            trace: vec![v1(0.0), v1(1.0), v1(3.0)],
        };
        let s = RobotState::at_rest(v1(0.0)).unwrap();
        assert!((p.input(0.05, &s).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!((p.input(0.15, &s).unwrap()[0] - 2.0).abs() < 1e-12);
        assert_eq!(p.input(1.0, &s).unwrap()[0], 3.0);
        let _ = ConstantInput::zero(1);
    }

    #[test]
    fn learning_reduces_error() {
        let k = 0.05;
        let model = cc(k, 0.0);
        let reference = Arc::new(SinusoidReference::uniform(1, 0.0, 0.3, 0.5, 0.0));
        let mut exp = IlcExperiment::new(
            model,
            reference,
            m1(0.3 * k),
            Simulator::new(1e-3, 6.0).unwrap(),
        )
        .unwrap();
        let errors: Vec<f64> = (0..11)
            .map(|_| exp.run_iteration().unwrap().rms_error)
            .collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    }

    #[test]
    fn controller_spec_builds_matching_controllers() {
        let model = cc(0.05, 0.0);
        let q_bar = v1(0.4);
        let state = RobotState::new(v1(0.1), v1(-0.2)).unwrap();
        let built = ControllerSpec::PdSetpoint {
            q_bar: q_bar.clone(),
            alpha: m1(0.3),
            beta: m1(0.02),
        }
        .build(model.clone())
        .unwrap();
        let direct = pd_setpoint(model.as_ref(), &q_bar, &state, &m1(0.3), &m1(0.02)).unwrap();
        assert_eq!(built.input(0.0, &state).unwrap(), direct);
        let constant = ControllerSpec::Constant { tau: v1(0.2) }
            .build(model.clone())
            .unwrap();
        assert_eq!(constant.input(3.0, &state).unwrap(), v1(0.2));
        assert!(ControllerSpec::Constant {
            tau: DVector::zeros(2)
        }
        .build(model.clone())
        .is_err());
        let ilc = ControllerSpec::Ilc {
            reference: ReferenceSpec::Constant { q: q_bar.clone() },
            gamma: m1(0.1),
            iterations: 3,
        };
        assert!(ilc.build(model).is_err());
        assert_eq!(ilc.reference(), Some(&ReferenceSpec::Constant { q: q_bar }));
        assert_eq!(ilc.set_point(), None);
    }
}
