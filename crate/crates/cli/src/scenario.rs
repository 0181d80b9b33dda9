//! Scenario files: a TOML document with unit-suffixed field names.
//!
//! ```toml
//! name = "cc_fig_evolution_a"
//!
//! [model]
//! kind = "cc"              # cc | pcc | rigid | rigid_pea
//! g_mps2 = 9.81
//! phi_rad = 0.0
//!
//! [[model.segments]]
//! m_kg = 0.5
//! L_m = 0.25
//! k_bar_Nm = 0.05
//! d_bar_Nms = 0.01
//!
//! [initial]
//! q_rad = [1.0471975511965976]
//!
//! [controller]
//! kind = "constant"
//! tau_Nm = [0.0]
//!
//! [simulation]
//! dt_s = 1e-4
//! duration_s = 10.0
//! ```
//!
//! See `scenarios/` for every section.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use softpcc::chain::{ActuationPattern, ChainParams, PccChain};
use softpcc::control::{ControllerSpec, ReferenceSpec, SinusoidReference, TaskSpace};
use softpcc::sim::{ExternalContact, Simulator};
use softpcc::{
    BackbonePoint, CcSegment, Gravity, LumpedRigid, RobotState, SegmentParams, SoftRobot, Wrench2D,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<ContactSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibria: Option<EquilibriaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cc,
    Pcc,
    Rigid,
    RigidPea,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cc => "cc",
            ModelKind::Pcc => "pcc",
            ModelKind::Rigid => "rigid",
            ModelKind::RigidPea => "rigid_pea",
        }
    }
}

fn standard_gravity() -> f64 {
    Gravity::STANDARD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "standard_gravity")]
    pub g_mps2: f64,
    #[serde(default)]
    pub phi_rad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_order: Option<usize>,
    pub segments: Vec<SegmentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuation: Option<ActuationPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub m_kg: f64,
    #[serde(rename = "L_m")]
    pub length_m: f64,
    #[serde(rename = "k_bar_Nm")]
    pub k_bar_nm: f64,
    #[serde(rename = "d_bar_Nms")]
    pub d_bar_nms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q_rad: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qdot_radps: Option<Vec<f64>>,
}

/// A gain: a scalar times identity, a diagonal, or a full matrix by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Gain {
    pub fn to_matrix(
        &self,
        rows: usize,
        cols: usize,
        field: &str,
    ) -> Result<DMatrix<f64>, CliError> {
        match self {
            Gain::Scalar(x) => Ok(DMatrix::identity(rows, cols) * *x),
            Gain::Diagonal(d) => {
                if rows != cols || d.len() != rows {
                    return Err(CliError::Schema(format!(
                        "{field}: diagonal gain needs {rows} entries for a {rows}x{cols} matrix, found {}",
                        d.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
            Gain::Full(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(CliError::Schema(format!(
                        "{field}: expected a {rows}x{cols} matrix"
                    )));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| r[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSection {
    Constant {
        q_rad: Vec<f64>,
    },
    Sinusoid {
        offset_rad: Vec<f64>,
        amplitude_rad: Vec<f64>,
        omega_radps: Vec<f64>,
        phase_rad: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSection {
    Constant {
        #[serde(rename = "tau_Nm")]
        tau: Vec<f64>,
    },
    Feedforward {
        q_bar_rad: Vec<f64>,
    },
    PdSetpoint {
        q_bar_rad: Vec<f64>,
        #[serde(rename = "alpha_Nm_per_rad")]
        alpha: Gain,
        #[serde(rename = "beta_Nms_per_rad")]
        beta: Gain,
    },
    TrackingFf {
        reference: ReferenceSection,
        #[serde(rename = "alpha_Nm_per_rad")]
        alpha: Gain,
        #[serde(rename = "beta_Nms_per_rad")]
        beta: Gain,
    },
    PdPlus {
        reference: ReferenceSection,
        #[serde(rename = "alpha_Nm_per_rad")]
        alpha: Gain,
        #[serde(rename = "beta_Nms_per_rad")]
        beta: Gain,
    },
    UaFeedforward {
        q_bar_rad: Vec<f64>,
    },
    UaPd {
        q_bar_rad: Vec<f64>,
        #[serde(rename = "alpha_Nm_per_rad")]
        alpha: Gain,
        #[serde(rename = "beta_Nms_per_rad")]
        beta: Gain,
    },
    KinematicTask {
        segment: usize,
        s: f64,
        #[serde(default)]
        task: TaskSpace,
        x_bar_m_rad: Vec<f64>,
        #[serde(rename = "k_e_per_s")]
        k_e: Gain,
        #[serde(rename = "k_v_per_s")]
        k_v: Gain,
    },
    OperationalSpace {
        segment: usize,
        s: f64,
        #[serde(default)]
        task: TaskSpace,
        x_bar_m_rad: Vec<f64>,
        #[serde(rename = "kp_per_s2")]
        kp: Gain,
        #[serde(rename = "kd_per_s")]
        kd: Gain,
    },
    Ilc {
        reference: ReferenceSection,
        #[serde(rename = "gamma_Nm_per_rad")]
        gamma: Gain,
        iterations: usize,
    },
}

fn default_dt() -> f64 {
    softpcc::sim::DEFAULT_DT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_period_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSection {
    pub segment: usize,
    pub s: f64,
    #[serde(default, rename = "fx_N")]
    pub fx_n: f64,
    #[serde(default, rename = "fy_N")]
    pub fy_n: f64,
    #[serde(default, rename = "tau_z_Nm")]
    pub tau_z_nm: f64,
}

fn default_q_min() -> f64 {
    -2.0 * std::f64::consts::PI
}

fn default_q_max() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_grid() -> usize {
    4001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaSection {
    #[serde(rename = "tau_bar_Nm")]
    pub tau_bar: Vec<f64>,
    /// Scan range for one-dof models.
    #[serde(default = "default_q_min")]
    pub q_min_rad: f64,
    #[serde(default = "default_q_max")]
    pub q_max_rad: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Newton starting points for multi-dof models.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guesses_rad: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub q_bar_rad: Vec<Vec<f64>>,
    #[serde(
        default,
        rename = "alpha_Nm_per_rad",
        skip_serializing_if = "Option::is_none"
    )]
    pub alpha: Option<Gain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "m_kg")]
    Mass,
    #[serde(rename = "L_m")]
    Length,
    #[serde(rename = "k_bar_Nm")]
    Stiffness,
    #[serde(rename = "d_bar_Nms")]
    Damping,
    #[serde(rename = "phi_rad")]
    Phi,
    #[serde(rename = "g_mps2")]
    Gravity,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::Mass => "m_kg",
            SweepParameter::Length => "L_m",
            SweepParameter::Stiffness => "k_bar_Nm",
            SweepParameter::Damping => "d_bar_Nms",
            SweepParameter::Phi => "phi_rad",
            SweepParameter::Gravity => "g_mps2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Segment to modify; all segments when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

fn schema(field: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{field}: {err}"))
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<(), CliError> {
    if expected == found {
        Ok(())
    } else {
        Err(CliError::Schema(format!(
            "{field}: expected {expected} entries, found {found}"
        )))
    }
}

fn vector(field: &str, v: &[f64], n: usize) -> Result<DVector<f64>, CliError> {
    check_len(field, n, v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Schema(format!("{field}: entries must be finite")));
    }
    Ok(DVector::from_column_slice(v))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario structures always serialize")
    }

    /// Checks everything that can be checked without running the model.
    pub fn validate(&self) -> Result<(), CliError> {
        let model = self.build_model()?;
        if let Some(init) = &self.initial {
            self.initial_state(model.as_ref())
                .map_err(|e| schema("initial", e))
                .map(|_| init)?;
        }
        if self.controller.is_some() {
            let spec = self.controller_spec(model.as_ref())?;
            if !matches!(spec, ControllerSpec::Ilc { .. }) {
                spec.build(model.clone())
                    .map_err(|e| schema("controller", e))?;
            }
        }
        if let Some(sim) = &self.simulation {
            let mut s =
                Simulator::new(sim.dt_s, sim.duration_s).map_err(|e| schema("simulation", e))?;
            if let Some(h) = sim.hold_period_s {
                s = s
                    .with_hold(h)
                    .map_err(|e| schema("simulation.hold_period_s", e))?;
            }
            let _ = s;
        }
        self.contacts(model.as_ref())?;
        if let Some(eq) = &self.equilibria {
            vector("equilibria.tau_bar_Nm", &eq.tau_bar, model.inputs())?;
            for (i, g) in eq.guesses_rad.iter().enumerate() {
                vector(&format!("equilibria.guesses_rad[{i}]"), g, model.dof())?;
            }
            if model.dof() == 1 && !(eq.q_min_rad < eq.q_max_rad && eq.grid_points >= 2) {
                return Err(CliError::Schema(
                    "equilibria: needs q_min_rad < q_max_rad and grid_points >= 2".into(),
                ));
            }
        }
        if let Some(st) = &self.stability {
            for (i, q) in st.q_bar_rad.iter().enumerate() {
                vector(&format!("stability.q_bar_rad[{i}]"), q, model.dof())?;
            }
            if let Some(a) = &st.alpha {
                a.to_matrix(model.inputs(), model.inputs(), "stability.alpha_Nm_per_rad")?;
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(CliError::Schema(
                    "sweep.values: at least one value is required".into(),
                ));
            }
            if let Some(seg) = sw.segment {
                if seg >= self.model.segments.len() {
                    return Err(CliError::Schema(format!("sweep.segment: no segment {seg}")));
                }
            }
            for (i, &v) in sw.values.iter().enumerate() {
                self.with_parameter(sw.parameter, sw.segment, v)
                    .build_model()
                    .map_err(|e| CliError::Schema(format!("sweep.values[{i}]: {e}")))?;
            }
        }
        Ok(())
    }

    fn gravity(&self) -> Result<Gravity, CliError> {
        Gravity::new(self.model.g_mps2, self.model.phi_rad).map_err(|e| schema("model", e))
    }

    fn segment_params(&self) -> Result<Vec<SegmentParams>, CliError> {
        self.model
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                SegmentParams::new(s.m_kg, s.length_m, s.k_bar_nm, s.d_bar_nms)
                    .map_err(|e| schema(&format!("model.segments[{i}]"), e))
            })
            .collect()
    }

    pub fn build_model(&self) -> Result<Arc<dyn SoftRobot>, CliError> {
        let gravity = self.gravity()?;
        let segments = self.segment_params()?;
        let kind = self.model.kind;
        if kind != ModelKind::Pcc {
            check_len("model.segments", 1, segments.len())?;
            if self.model.actuation.is_some() {
                return Err(CliError::Schema(format!(
                    "model.actuation: only pcc models take an actuation pattern, not {}",
                    kind.as_str()
                )));
            }
        }
        let model: Arc<dyn SoftRobot> = match kind {
            ModelKind::Cc => {
                Arc::new(CcSegment::new(segments[0], gravity).map_err(|e| schema("model", e))?)
            }
            ModelKind::Rigid | ModelKind::RigidPea => Arc::new(
                LumpedRigid::new(segments[0], gravity, kind == ModelKind::RigidPea)
                    .map_err(|e| schema("model", e))?,
            ),
            ModelKind::Pcc => {
                let params = ChainParams {
                    segments,
                    gravity,
                    actuation: self
                        .model
                        .actuation
                        .clone()
                        .unwrap_or(ActuationPattern::TipTorquePerSegment),
                };
                let chain = match self.model.quadrature_order {
                    Some(order) => PccChain::with_quadrature_order(params, order),
                    None => PccChain::new(params),
                };
                Arc::new(chain.map_err(|e| schema("model", e))?)
            }
        };
        Ok(model)
    }

    pub fn initial_state(&self, model: &dyn SoftRobot) -> Result<RobotState, CliError> {
        let n = model.dof();
        let Some(init) = &self.initial else {
            return RobotState::at_rest(DVector::zeros(n)).map_err(|e| schema("initial", e));
        };
        let q = vector("initial.q_rad", &init.q_rad, n)?;
        let qdot = match &init.qdot_radps {
            Some(v) => vector("initial.qdot_radps", v, n)?,
            None => DVector::zeros(n),
        };
        RobotState::new(q, qdot).map_err(|e| schema("initial", e))
    }

    pub fn contacts(&self, model: &dyn SoftRobot) -> Result<Vec<ExternalContact>, CliError> {
        self.contacts
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let field = format!("contacts[{i}]");
                let contact = ExternalContact::new(
                    c.segment,
                    c.s,
                    Wrench2D {
                        fx: c.fx_n,
                        fy: c.fy_n,
                        tau_z: c.tau_z_nm,
                    },
                )
                .map_err(|e| schema(&field, e))?;
                model
                    .jacobian(contact.point, &DVector::zeros(model.dof()))
                    .map_err(|e| schema(&field, e))?;
                Ok(contact)
            })
            .collect()
    }

    fn reference_spec(&self, r: &ReferenceSection, n: usize) -> Result<ReferenceSpec, CliError> {
        Ok(match r {
            ReferenceSection::Constant { q_rad } => ReferenceSpec::Constant {
                q: vector("controller.reference.q_rad", q_rad, n)?,
            },
            ReferenceSection::Sinusoid {
                offset_rad,
                amplitude_rad,
                omega_radps,
                phase_rad,
            } => {
                check_len("controller.reference.offset_rad", n, offset_rad.len())?;
                ReferenceSpec::Sinusoid(
                    SinusoidReference::new(
                        offset_rad.clone(),
                        amplitude_rad.clone(),
                        omega_radps.clone(),
                        phase_rad.clone(),
                    )
                    .map_err(|e| schema("controller.reference", e))?,
                )
            }
        })
    }

    fn point(&self, segment: usize, s: f64) -> Result<BackbonePoint, CliError> {
        BackbonePoint::new(segment, s).map_err(|e| schema("controller", e))
    }

    pub fn controller_spec(&self, model: &dyn SoftRobot) -> Result<ControllerSpec, CliError> {
        let (n, m) = (model.dof(), model.inputs());
        let Some(c) = &self.controller else {
            return Ok(ControllerSpec::Constant {
                tau: DVector::zeros(m),
            });
        };
        let g = |gain: &Gain, rows: usize, cols: usize, field: &str| {
            gain.to_matrix(rows, cols, &format!("controller.{field}"))
        };
        Ok(match c {
            ControllerSection::Constant { tau } => ControllerSpec::Constant {
                tau: vector("controller.tau_Nm", tau, m)?,
            },
            ControllerSection::Feedforward { q_bar_rad } => ControllerSpec::Feedforward {
                q_bar: vector("controller.q_bar_rad", q_bar_rad, n)?,
            },
            ControllerSection::PdSetpoint {
                q_bar_rad,
                alpha,
                beta,
            } => ControllerSpec::PdSetpoint {
                q_bar: vector("controller.q_bar_rad", q_bar_rad, n)?,
                alpha: g(alpha, n, n, "alpha_Nm_per_rad")?,
                beta: g(beta, n, n, "beta_Nms_per_rad")?,
            },
            ControllerSection::TrackingFf {
                reference,
                alpha,
                beta,
            } => ControllerSpec::TrackingFf {
                reference: self.reference_spec(reference, n)?,
                alpha: g(alpha, n, n, "alpha_Nm_per_rad")?,
                beta: g(beta, n, n, "beta_Nms_per_rad")?,
            },
            ControllerSection::PdPlus {
                reference,
                alpha,
                beta,
            } => ControllerSpec::PdPlus {
                reference: self.reference_spec(reference, n)?,
                alpha: g(alpha, n, n, "alpha_Nm_per_rad")?,
                beta: g(beta, n, n, "beta_Nms_per_rad")?,
            },
            ControllerSection::UaFeedforward { q_bar_rad } => ControllerSpec::UaFeedforward {
                q_bar: vector("controller.q_bar_rad", q_bar_rad, n)?,
            },
            ControllerSection::UaPd {
                q_bar_rad,
                alpha,
                beta,
            } => ControllerSpec::UaPd {
                q_bar: vector("controller.q_bar_rad", q_bar_rad, n)?,
                alpha: g(alpha, m, m, "alpha_Nm_per_rad")?,
                beta: g(beta, m, m, "beta_Nms_per_rad")?,
            },
            ControllerSection::KinematicTask {
                segment,
                s,
                task,
                x_bar_m_rad,
                k_e,
                k_v,
            } => ControllerSpec::KinematicTask {
                point: self.point(*segment, *s)?,
                task: *task,
                x_bar: vector("controller.x_bar_m_rad", x_bar_m_rad, task.dim())?,
                k_e: g(k_e, task.dim(), task.dim(), "k_e_per_s")?,
                k_v: g(k_v, n, n, "k_v_per_s")?,
            },
            ControllerSection::OperationalSpace {
                segment,
                s,
                task,
                x_bar_m_rad,
                kp,
                kd,
            } => ControllerSpec::OperationalSpace {
                point: self.point(*segment, *s)?,
                task: *task,
                x_bar: vector("controller.x_bar_m_rad", x_bar_m_rad, task.dim())?,
                kp: g(kp, task.dim(), task.dim(), "kp_per_s2")?,
                kd: g(kd, task.dim(), task.dim(), "kd_per_s")?,
            },
            ControllerSection::Ilc {
                reference,
                gamma,
                iterations,
            } => {
                if *iterations == 0 {
                    return Err(CliError::Schema(
                        "controller.iterations: must be at least 1".into(),
                    ));
                }
                ControllerSpec::Ilc {
                    reference: self.reference_spec(reference, n)?,
                    gamma: g(gamma, m, n, "gamma_Nm_per_rad")?,
                    iterations: *iterations,
                }
            }
        })
    }

    /// Simulation settings with command-line overrides applied.
    pub fn simulator(&self, dt: Option<f64>, duration: Option<f64>) -> Result<Simulator, CliError> {
        let section = self.simulation.ok_or_else(|| {
            CliError::Schema("simulation: section is required for this command".into())
        })?;
        let mut sim = Simulator::new(
            dt.unwrap_or(section.dt_s),
            duration.unwrap_or(section.duration_s),
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(h) = section.hold_period_s {
            sim = sim
                .with_hold(h)
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(sim)
    }

    /// This scenario with one model parameter replaced.
    pub fn with_parameter(
        &self,
        parameter: SweepParameter,
        segment: Option<usize>,
        value: f64,
    ) -> Scenario {
        let mut s = self.clone();
        match parameter {
            SweepParameter::Phi => s.model.phi_rad = value,
            SweepParameter::Gravity => s.model.g_mps2 = value,
            _ => {
                for (i, seg) in s.model.segments.iter_mut().enumerate() {
                    if segment.is_some_and(|target| target != i) {
                        continue;
                    }
                    match parameter {
                        SweepParameter::Mass => seg.m_kg = value,
                        SweepParameter::Length => seg.length_m = value,
                        SweepParameter::Stiffness => seg.k_bar_nm = value,
                        SweepParameter::Damping => seg.d_bar_nms = value,
                        SweepParameter::Phi | SweepParameter::Gravity => unreachable!(),
                    }
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[model]
kind = "cc"
[[model.segments]]
m_kg = 0.5
L_m = 0.25
k_bar_Nm = 0.05
d_bar_Nms = 0.01
"#;

    #[test]
    fn minimal_defaults() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.model.g_mps2, 9.81);
        assert_eq!(s.model.phi_rad, 0.0);
        let model = s.build_model().unwrap();
        assert_eq!(s.initial_state(model.as_ref()).unwrap().q[0], 0.0);
    }

    #[test]
    fn unknown_field_is_reported_with_location() {
        let text = MINIMAL.replace("m_kg", "mass_kg");
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("mass_kg"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let text = MINIMAL.replace("m_kg = 0.5", "m_kg = -0.5");
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("model.segments[0]"), "{err}");
        let text = format!("{MINIMAL}\n[initial]\nq_rad = [0.1, 0.2]\n");
        assert!(Scenario::parse(&text)
            .unwrap_err()
            .to_string()
            .contains("initial.q_rad"));
    }

    #[test]
    fn gains() {
        assert_eq!(
            Gain::Scalar(2.0).to_matrix(2, 2, "a").unwrap(),
            DMatrix::identity(2, 2) * 2.0
        );
        assert_eq!(
            Gain::Diagonal(vec![1.0, 3.0]).to_matrix(2, 2, "a").unwrap(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]))
        );
        assert!(Gain::Full(vec![vec![1.0]]).to_matrix(2, 2, "a").is_err());
        let parsed: ControllerSection = toml::from_str(
            "kind = \"pd_setpoint\"\nq_bar_rad = [0.0]\nalpha_Nm_per_rad = [[1.0]]\nbeta_Nms_per_rad = 0.1\n",
        )
        .unwrap();
        assert!(matches!(
            parsed,
            ControllerSection::PdSetpoint {
                alpha: Gain::Full(_),
                beta: Gain::Scalar(_),
                ..
            }
        ));
    }

    #[test]
    fn sweep_replaces_parameter() {
        let s = Scenario::parse(MINIMAL).unwrap();
        let t = s.with_parameter(SweepParameter::Stiffness, None, 0.2);
        assert_eq!(t.model.segments[0].k_bar_nm, 0.2);
        assert_eq!(
            s.with_parameter(SweepParameter::Phi, None, 1.0)
                .model
                .phi_rad,
            1.0
        );
    }

    #[test]
    fn round_trip() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }
}
