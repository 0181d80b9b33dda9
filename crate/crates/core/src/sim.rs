//! Fixed-step RK4 integration of the closed-loop dynamics with energy
//! accounting.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::chain::Wrench2D;
use crate::error::{check_dim, Error, Result};
use crate::model::{BackbonePoint, RobotState, SoftRobot};

/// Default integration step [s].
pub const DEFAULT_DT: f64 = 1e-4;

/// A control law `τ = u(t, q, q̇)`.
pub trait Controller: Send + Sync {
    fn input(&self, t: f64, state: &RobotState) -> Result<DVector<f64>>;

    /// Lyapunov function of the closed loop, when the controller has one.
    fn lyapunov(&self, _state: &RobotState) -> Option<f64> {
        None
    }
}

/// Constant input, including the unforced case.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantInput {
    pub tau: DVector<f64>,
}

impl ConstantInput {
    pub fn new(tau: DVector<f64>) -> Self {
        Self { tau }
    }

    pub fn zero(inputs: usize) -> Self {
        Self::new(DVector::zeros(inputs))
    }
}

impl Controller for ConstantInput {
    fn input(&self, _t: f64, _state: &RobotState) -> Result<DVector<f64>> {
        Ok(self.tau.clone())
    }
}

/// Constant external wrench acting at a backbone point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalContact {
    pub point: BackbonePoint,
    pub wrench: Wrench2D,
}

impl ExternalContact {
    pub fn new(segment: usize, s_local: f64, wrench: Wrench2D) -> Result<Self> {
        Ok(Self {
            point: BackbonePoint::new(segment, s_local)?,
            wrench,
        })
    }
}

/// `Σ J_cᵀ w` over all contacts.
pub fn contact_force(
    model: &dyn SoftRobot,
    q: &DVector<f64>,
    contacts: &[ExternalContact],
) -> Result<DVector<f64>> {
    let mut f = DVector::zeros(model.dof());
    for c in contacts {
        let j = model.jacobian(c.point, q)?;
        f += j.transpose() * c.wrench.to_dvector();
    }
    Ok(f)
}

/// Generalized acceleration under input `tau` and constant contact wrenches.
pub fn accel(
    model: &dyn SoftRobot,
    state: &RobotState,
    tau: &DVector<f64>,
    contacts: &[ExternalContact],
) -> Result<DVector<f64>> {
    check_dim("input", model.inputs(), tau.len())?;
    let terms = model.terms(state)?;
    let rhs = &terms.actuation * tau + contact_force(model, &state.q, contacts)?
        - terms.bias_force(&state.qdot);
    let chol = terms.mass.cholesky().ok_or(Error::SingularInertia)?;
    let qddot = chol.solve(&rhs);
    if qddot.iter().all(|v| v.is_finite()) {
        Ok(qddot)
    } else {
        Err(Error::SingularInertia)
    }
}

fn shifted(state: &RobotState, dq: &DVector<f64>, dqd: &DVector<f64>, h: f64) -> RobotState {
    RobotState {
        q: &state.q + dq * h,
        qdot: &state.qdot + dqd * h,
    }
}

/// One classical RK4 step; the controller is evaluated at every stage.
pub fn rk4_step(
    model: &dyn SoftRobot,
    state: &RobotState,
    t: f64,
    controller: &dyn Controller,
    contacts: &[ExternalContact],
    dt: f64,
) -> Result<RobotState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            value: dt,
            reason: "must be positive",
        });
    }
    let deriv = |t: f64, x: &RobotState| -> Result<(DVector<f64>, DVector<f64>)> {
        let tau = controller.input(t, x)?;
        Ok((x.qdot.clone(), accel(model, x, &tau, contacts)?))
    };
    let (k1q, k1v) = deriv(t, state)?;
    let (k2q, k2v) = deriv(t + 0.5 * dt, &shifted(state, &k1q, &k1v, 0.5 * dt))?;
    let (k3q, k3v) = deriv(t + 0.5 * dt, &shifted(state, &k2q, &k2v, 0.5 * dt))?;
    let (k4q, k4v) = deriv(t + dt, &shifted(state, &k3q, &k3v, dt))?;
    let next = RobotState {
        q: &state.q + (k1q + 2.0 * k2q + 2.0 * k3q + k4q) * (dt / 6.0),
        qdot: &state.qdot + (k1v + 2.0 * k2v + 2.0 * k3v + k4v) * (dt / 6.0),
    };
    if next.q.iter().chain(next.qdot.iter()).all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite {
            what: "integrated state",
        })
    }
}

/// Energies at one sample [J].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Energy {
    pub kinetic: f64,
    pub elastic: f64,
    pub gravity: f64,
    pub total: f64,
}

impl Energy {
    pub fn of(model: &dyn SoftRobot, state: &RobotState) -> Self {
        let kinetic = model.kinetic_energy(state);
        let u = model.potential_energy(&state.q);
        Self {
            kinetic,
            elastic: u.elastic,
            gravity: u.gravity,
            total: kinetic + u.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<RobotState>,
    pub inputs: Vec<DVector<f64>>,
    pub energies: Vec<Energy>,
    pub lyapunov: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &RobotState {
        self.states
            .last()
            .expect("a trajectory holds at least the initial state")
    }

    pub fn csv_header(&self) -> String {
        let n = self.states.first().map_or(0, RobotState::dof);
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("q{i}")));
        cols.extend((1..=n).map(|i| format!("qd{i}")));
        cols.extend((1..=m).map(|i| format!("tau{i}")));
        cols.extend(["E_kin", "U_K", "U_G", "E_tot"].map(String::from));
        if self.lyapunov.is_some() {
            cols.push("V".into());
        }
        cols.join(",")
    }

    /// Writes the trajectory as CSV, one row per sample, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        for k in 0..self.len() {
            let st = &self.states[k];
            let e = &self.energies[k];
            let mut row: Vec<f64> = vec![self.times[k]];
            row.extend(st.q.iter());
            row.extend(st.qdot.iter());
            row.extend(self.inputs[k].iter());
            row.extend([e.kinetic, e.elastic, e.gravity, e.total]);
            if let Some(v) = &self.lyapunov {
                row.push(v[k]);
            }
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Simulator {
    pub dt: f64,
    pub duration: f64,
    /// Zero-order hold period of the controller; `None` evaluates it at every stage.
    pub hold_period: Option<f64>,
}

impl Simulator {
    pub fn new(dt: f64, duration: f64) -> Result<Self> {
        let sim = Self {
            dt,
            duration,
            hold_period: None,
        };
        sim.validate()?;
        Ok(sim)
    }

    pub fn with_hold(mut self, period: f64) -> Result<Self> {
        self.hold_period = Some(period);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("dt", self.dt), ("duration", self.duration)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive",
                });
            }
        }
        if let Some(p) = self.hold_period {
            if !(p >= self.dt && p.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "hold_period",
                    value: p,
                    reason: "must be at least one step",
                });
            }
        }
        Ok(())
    }

    /// Number of steps; the last sample is at `steps * dt ≥ duration`.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    fn hold_steps(&self) -> Option<usize> {
        self.hold_period
            .map(|p| ((p / self.dt).round() as usize).max(1))
    }

    pub fn run(
        &self,
        model: &dyn SoftRobot,
        controller: &dyn Controller,
        initial: &RobotState,
        contacts: &[ExternalContact],
    ) -> Result<Trajectory> {
        self.validate()?;
        check_dim("initial state", model.dof(), initial.dof())?;
        let steps = self.steps();
        let hold = self.hold_steps();
        let mut traj = Trajectory {
            times: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            inputs: Vec::with_capacity(steps + 1),
            energies: Vec::with_capacity(steps + 1),
            lyapunov: controller
                .lyapunov(initial)
                .map(|_| Vec::with_capacity(steps + 1)),
        };
        let mut state = initial.clone();
        let mut held = controller.input(0.0, &state)?;
        for k in 0..=steps {
            let t = k as f64 * self.dt;
            let tau = match hold {
                Some(h) if k % h == 0 => {
                    held = controller.input(t, &state)?;
                    held.clone()
                }
                Some(_) => held.clone(),
                None => controller.input(t, &state)?,
            };
            check_dim("controller output", model.inputs(), tau.len())?;
            traj.times.push(t);
            traj.energies.push(Energy::of(model, &state));
            if let Some(v) = traj.lyapunov.as_mut() {
                v.push(controller.lyapunov(&state).unwrap_or(f64::NAN));
            }
            traj.states.push(state.clone());
            traj.inputs.push(tau.clone());
            if k == steps {
                break;
            }
            state = match hold {
                Some(_) => rk4_step(
                    model,
                    &state,
                    t,
                    &ConstantInput::new(tau),
                    contacts,
                    self.dt,
                )?,
                None => rk4_step(model, &state, t, controller, contacts, self.dt)?,
            };
        }
        Ok(traj)
    }
}

/// Runs `controller` on `model` from `initial` for `duration` seconds with step `dt`.
pub fn simulate(
    model: &dyn SoftRobot,
    controller: &dyn Controller,
    initial: &RobotState,
    duration: f64,
    dt: f64,
    contacts: &[ExternalContact],
) -> Result<Trajectory> {
    Simulator::new(dt, duration)?.run(model, controller, initial, contacts)
}
