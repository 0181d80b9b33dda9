//! Python bindings: models, dynamics terms, equilibria, stability and simulation.
//!
//! Vectors are Python lists of floats and matrices are lists of rows.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use softpcc::analysis::scan_equilibria_1d;
use softpcc::control::ControllerSpec;
use softpcc::{
    classify_stability, solve_equilibrium, ActuationPattern, BackbonePoint, CcSegment, ChainParams,
    EquilibriumReport, Error, Gravity, LumpedRigid, PccChain, RobotState, SegmentParams, Simulator,
    SoftRobot,
};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::SegmentOutOfRange { .. }
        | Error::ArclengthOutOfRange { .. }
        | Error::PatternMismatch { .. }
        | Error::NotFullyActuated { .. }
        | Error::LengthMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

pub fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Matrix from a list of rows, rejecting ragged input.
pub fn matrix(r: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let ncols = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != ncols) {
        return Err("matrix rows must all have the same length".into());
    }
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}

fn gain(r: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix(&r).map_err(PyValueError::new_err)
}

fn report<'py>(py: Python<'py>, r: &EquilibriumReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("q_bar", list(&r.q_bar))?;
    d.set_item("tau_bar", list(&r.tau_bar))?;
    d.set_item("residual", r.residual)?;
    d.set_item("hessian", rows(&r.hessian))?;
    d.set_item("min_eigenvalue", r.min_eigenvalue)?;
    d.set_item("verdict", r.verdict.to_string())?;
    Ok(d)
}

/// A planar soft robot model.
#[pyclass(name = "Model", module = "softpcc", frozen)]
pub struct PyModel {
    inner: Arc<dyn SoftRobot>,
    kind: &'static str,
}

#[pymethods]
impl PyModel {
    /// Single constant-curvature segment.
    #[staticmethod]
    #[pyo3(signature = (m, length, k_bar, d_bar, g = Gravity::STANDARD, phi = 0.0))]
    fn cc(m: f64, length: f64, k_bar: f64, d_bar: f64, g: f64, phi: f64) -> PyResult<Self> {
        let params = SegmentParams::new(m, length, k_bar, d_bar).map_err(to_py_err)?;
        let gravity = Gravity::new(g, phi).map_err(to_py_err)?;
        Ok(Self {
            inner: Arc::new(CcSegment::new(params, gravity).map_err(to_py_err)?),
            kind: "cc",
        })
    }

    /// Lumped rigid-link approximation, with or without the parallel spring.
    #[staticmethod]
    #[pyo3(signature = (m, length, k_bar, d_bar, g = Gravity::STANDARD, phi = 0.0, spring = true))]
    fn rigid(
        m: f64,
        length: f64,
        k_bar: f64,
        d_bar: f64,
        g: f64,
        phi: f64,
        spring: bool,
    ) -> PyResult<Self> {
        let params = SegmentParams::new(m, length, k_bar, d_bar).map_err(to_py_err)?;
        let gravity = Gravity::new(g, phi).map_err(to_py_err)?;
        Ok(Self {
            inner: Arc::new(LumpedRigid::new(params, gravity, spring).map_err(to_py_err)?),
            kind: if spring { "rigid_pea" } else { "rigid" },
        })
    }

    /// Piecewise constant curvature chain; `segments` holds `(m, L, k_bar, d_bar)`
    /// tuples and `actuation` an optional JSON actuation pattern.
    #[staticmethod]
    #[pyo3(signature = (segments, g = Gravity::STANDARD, phi = 0.0, actuation = None))]
    fn pcc(
        segments: Vec<(f64, f64, f64, f64)>,
        g: f64,
        phi: f64,
        actuation: Option<&str>,
    ) -> PyResult<Self> {
        let segments = segments
            .into_iter()
            .map(|(m, l, k, d)| SegmentParams::new(m, l, k, d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py_err)?;
        let actuation = match actuation {
            Some(text) => serde_json::from_str::<ActuationPattern>(text)
                .map_err(|e| PyValueError::new_err(format!("actuation: {e}")))?,
            None => ActuationPattern::TipTorquePerSegment,
        };
        let params = ChainParams {
            segments,
            gravity: Gravity::new(g, phi).map_err(to_py_err)?,
            actuation,
        };
        Ok(Self {
            inner: Arc::new(PccChain::new(params).map_err(to_py_err)?),
            kind: "pcc",
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.kind
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    #[getter]
    fn inputs(&self) -> usize {
        self.inner.inputs()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, dof={}, inputs={})",
            self.kind,
            self.inner.dof(),
            self.inner.inputs()
        )
    }

    /// `(x, y, theta)` of a backbone point.
    fn pose(&self, segment: usize, s: f64, q: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        let q = self.config(q)?;
        let point = BackbonePoint::new(segment, s).map_err(to_py_err)?;
        let p = self.inner.pose(point, &q).map_err(to_py_err)?;
        Ok((p.x, p.y, p.theta))
    }

    fn jacobian(&self, segment: usize, s: f64, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let q = self.config(q)?;
        let point = BackbonePoint::new(segment, s).map_err(to_py_err)?;
        Ok(rows(&self.inner.jacobian(point, &q).map_err(to_py_err)?))
    }

    fn mass_matrix(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.mass_matrix(&self.config(q)?)))
    }

    fn coriolis_matrix(&self, q: Vec<f64>, qdot: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let state = self.state(q, Some(qdot))?;
        Ok(rows(&self.inner.coriolis_matrix(&state.q, &state.qdot)))
    }

    fn gravity_force(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&self.inner.gravity_force(&self.config(q)?)))
    }

    fn elastic_force(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&self.inner.elastic_force(&self.config(q)?)))
    }

    fn damping_matrix(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.damping_matrix(&self.config(q)?)))
    }

    fn actuation_matrix(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.actuation_matrix(&self.config(q)?)))
    }

    /// `(U_K, U_G)`.
    fn potential_energy(&self, q: Vec<f64>) -> PyResult<(f64, f64)> {
        let u = self.inner.potential_energy(&self.config(q)?);
        Ok((u.elastic, u.gravity))
    }

    fn kinetic_energy(&self, q: Vec<f64>, qdot: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.kinetic_energy(&self.state(q, Some(qdot))?))
    }

    /// Static equilibrium under constant input `tau`, by damped Newton from `q0`.
    fn equilibrium<'py>(
        &self,
        py: Python<'py>,
        tau: Vec<f64>,
        q0: Vec<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let q0 = self.config(q0)?;
        let r = solve_equilibrium(self.inner.as_ref(), &vector(&tau), &q0).map_err(to_py_err)?;
        report(py, &r)
    }

    /// Every equilibrium of a one-dof model on `[lo, hi]`, in increasing order.
    #[pyo3(signature = (tau, lo, hi, points = 4001))]
    fn scan_equilibria<'py>(
        &self,
        py: Python<'py>,
        tau: Vec<f64>,
        lo: f64,
        hi: f64,
        points: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let found = scan_equilibria_1d(self.inner.as_ref(), &vector(&tau), (lo, hi), points)
            .map_err(to_py_err)?;
        found.iter().map(|r| report(py, r)).collect()
    }

    /// Stability of `q_bar` held by its holding input, optionally with feedback `alpha`.
    #[pyo3(signature = (q_bar, alpha = None))]
    fn classify<'py>(
        &self,
        py: Python<'py>,
        q_bar: Vec<f64>,
        alpha: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let q_bar = self.config(q_bar)?;
        let alpha = alpha.map(gain).transpose()?;
        let r =
            classify_stability(self.inner.as_ref(), &q_bar, alpha.as_ref()).map_err(to_py_err)?;
        report(py, &r)
    }

    /// Integrates the closed loop from `(q0, qdot0)`. Without a controller the
    /// input is zero. Returns time, state, input and energy columns as lists.
    #[pyo3(signature = (q0, duration, dt = softpcc::sim::DEFAULT_DT, qdot0 = None, controller = None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        q0: Vec<f64>,
        duration: f64,
        dt: f64,
        qdot0: Option<Vec<f64>>,
        controller: Option<&PyController>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let start = self.state(q0, qdot0)?;
        let spec = match controller {
            Some(c) => c.spec.clone(),
            None => ControllerSpec::Constant {
                tau: DVector::zeros(self.inner.inputs()),
            },
        };
        let ctrl = spec.build(self.inner.clone()).map_err(to_py_err)?;
        let sim = Simulator::new(dt, duration).map_err(to_py_err)?;
        let traj = py
            .detach(|| sim.run(self.inner.as_ref(), ctrl.as_ref(), &start, &[]))
            .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("t", traj.times.clone())?;
        d.set_item(
            "q",
            traj.states.iter().map(|s| list(&s.q)).collect::<Vec<_>>(),
        )?;
        d.set_item(
            "qdot",
            traj.states
                .iter()
                .map(|s| list(&s.qdot))
                .collect::<Vec<_>>(),
        )?;
        d.set_item("tau", traj.inputs.iter().map(list).collect::<Vec<_>>())?;
        d.set_item(
            "energy",
            traj.energies.iter().map(|e| e.total).collect::<Vec<_>>(),
        )?;
        d.set_item("lyapunov", traj.lyapunov.clone())?;
        Ok(d)
    }
}

impl PyModel {
    fn config(&self, q: Vec<f64>) -> PyResult<DVector<f64>> {
        Ok(self.state(q, None)?.q)
    }

    fn state(&self, q: Vec<f64>, qdot: Option<Vec<f64>>) -> PyResult<RobotState> {
        let n = self.inner.dof();
        if q.len() != n {
            return Err(PyValueError::new_err(format!(
                "expected {n} coordinates, got {}",
                q.len()
            )));
        }
        let qdot = qdot.unwrap_or_else(|| vec![0.0; n]);
        if qdot.len() != n {
            return Err(PyValueError::new_err(format!(
                "expected {n} velocities, got {}",
                qdot.len()
            )));
        }
        RobotState::new(vector(&q), vector(&qdot)).map_err(to_py_err)
    }
}

/// A control law to pass to `Model.simulate`.
#[pyclass(name = "Controller", module = "softpcc", frozen)]
pub struct PyController {
    spec: ControllerSpec,
}

#[pymethods]
impl PyController {
    #[staticmethod]
    fn constant(tau: Vec<f64>) -> Self {
        Self {
            spec: ControllerSpec::Constant { tau: vector(&tau) },
        }
    }

    /// Model-based feedforward holding `q_bar` (fully actuated models).
    #[staticmethod]
    fn feedforward(q_bar: Vec<f64>) -> Self {
        Self {
            spec: ControllerSpec::Feedforward {
                q_bar: vector(&q_bar),
            },
        }
    }

    #[staticmethod]
    fn pd_setpoint(q_bar: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            spec: ControllerSpec::PdSetpoint {
                q_bar: vector(&q_bar),
                alpha: gain(alpha)?,
                beta: gain(beta)?,
            },
        })
    }

    /// PD through the actuation matrix for underactuated models.
    #[staticmethod]
    fn ua_pd(q_bar: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            spec: ControllerSpec::UaPd {
                q_bar: vector(&q_bar),
                alpha: gain(alpha)?,
                beta: gain(beta)?,
            },
        })
    }

    fn __repr__(&self) -> String {
        let kind = match &self.spec {
            ControllerSpec::Constant { .. } => "constant",
            ControllerSpec::Feedforward { .. } => "feedforward",
            ControllerSpec::PdSetpoint { .. } => "pd_setpoint",
            ControllerSpec::UaPd { .. } => "ua_pd",
            _ => "other",
        };
        format!("Controller({kind})")
    }
}

#[pymodule(name = "softpcc")]
fn softpcc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyController>()?;
    m.add("STANDARD_GRAVITY", Gravity::STANDARD)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matrix(&rows(&m)).unwrap(), m);
        assert!(matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert_eq!(list(&vector(&[1.0, -2.0])), vec![1.0, -2.0]);
    }
}
