//! Equilibria, their local stability, Lyapunov values and stiffness maps.
//!
//! The static residual under a constant input `τ̄` is
//! `r(q) = K(q) + G(q) − A(q) τ̄`; its Jacobian is the effective
//! configuration-space stiffness of the equilibrium.

use nalgebra::{DMatrix, DVector};
use rand::{rngs::StdRng, Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{check_configuration, BackbonePoint, RobotState, SoftRobot};
use crate::numerics::{fd_jacobian, left_inverse, symmetrize, DEFAULT_FD_STEP};

/// Residual norm below which a configuration counts as an equilibrium [N·m].
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// Attainability residual accepted by [`classify_stability`] [N·m].
pub const CLASSIFY_TOL: f64 = 1e-8;

/// Relative eigenvalue band treated as marginal.
pub const MARGINAL_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub q_bar: DVector<f64>,
    pub tau_bar: DVector<f64>,
    pub residual: f64,
    /// Symmetric stiffness at `q̄`, including the feedback term when present.
    pub hessian: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub verdict: Verdict,
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: EQUILIBRIUM_TOL,
            max_iterations: 200,
            max_halvings: 30,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

/// `K(q) + G(q) − A(q) τ̄`.
pub fn static_residual(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    q: &DVector<f64>,
) -> DVector<f64> {
    model.potential_force(q) - model.actuation_matrix(q) * tau_bar
}

fn verdict_of(hessian: &DMatrix<f64>) -> (f64, Verdict) {
    let min = hessian.symmetric_eigenvalues().min();
    let tol = MARGINAL_RTOL * hessian.norm();
    let verdict = if min > tol {
        Verdict::Stable
    } else if min < -tol {
        Verdict::Unstable
    } else {
        Verdict::Marginal
    };
    (min, verdict)
}

/// Effective stiffness `∂r/∂q` at `q`, symmetrized, plus `A α Aᵀ` when given.
pub fn effective_stiffness(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    q: &DVector<f64>,
    alpha: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let raw = fd_jacobian(|q| static_residual(model, tau_bar, q), q, DEFAULT_FD_STEP)?;
    let mut h = symmetrize(&raw);
    if let Some(alpha) = alpha {
        let m = model.inputs();
        if alpha.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                what: "feedback gain",
                expected: m,
                found: alpha.nrows(),
            });
        }
        let a = model.actuation_matrix(q);
        h += symmetrize(&(&a * alpha * a.transpose()));
    }
    Ok(h)
}

fn report(
    model: &dyn SoftRobot,
    q_bar: DVector<f64>,
    tau_bar: DVector<f64>,
    residual: f64,
    alpha: Option<&DMatrix<f64>>,
) -> Result<EquilibriumReport> {
    let hessian = effective_stiffness(model, &tau_bar, &q_bar, alpha)?;
    let (min_eigenvalue, verdict) = verdict_of(&hessian);
    Ok(EquilibriumReport {
        q_bar,
        tau_bar,
        residual,
        hessian,
        min_eigenvalue,
        verdict,
    })
}

/// Solves `K + G = A τ̄` from `q0` with damped Newton steps.
pub fn solve_equilibrium(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    q0: &DVector<f64>,
) -> Result<EquilibriumReport> {
    solve_equilibrium_with(model, tau_bar, q0, &NewtonOptions::default())
}

pub fn solve_equilibrium_with(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    q0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<EquilibriumReport> {
    check_configuration(model, q0)?;
    check_dim("input", model.inputs(), tau_bar.len())?;
    let r = |q: &DVector<f64>| static_residual(model, tau_bar, q);
    let mut q = q0.clone();
    let mut res = r(&q);
    let mut norm = res.norm();
    for _ in 0..opts.max_iterations {
        if norm < opts.tolerance {
            return report(model, q, tau_bar.clone(), norm, None);
        }
        let jac = fd_jacobian(r, &q, opts.fd_step)?;
        let newton = jac
            .clone()
            .lu()
            .solve(&(-&res))
            .filter(|d| d.iter().all(|v| v.is_finite()));
        let descent = -jac.transpose() * &res;
        let cauchy = {
            let jd = &jac * &descent;
            let denom = jd.norm_squared();
            if denom > 0.0 {
                descent.clone() * (descent.norm_squared() / denom)
            } else {
                descent
            }
        };
        let mut accepted = None;
        for dir in newton.iter().chain(std::iter::once(&cauchy)) {
            let mut step = 1.0;
            for _ in 0..=opts.max_halvings {
                let trial = &q + dir * step;
                let trial_res = r(&trial);
                let trial_norm = trial_res.norm();
                if trial_norm.is_finite() && trial_norm < norm {
                    accepted = Some((trial, trial_res, trial_norm));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((qn, rn, nn)) => {
                q = qn;
                res = rn;
                norm = nn;
            }
            None => break,
        }
    }
    if norm < opts.tolerance {
        return report(model, q, tau_bar.clone(), norm, None);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual: norm,
        last: q,
    })
}

/// All sign changes of the static residual of a one-dof model on a uniform
/// grid over `range`, each refined by bisection, in increasing order.
pub fn scan_equilibria_1d(
    model: &dyn SoftRobot,
    tau_bar: &DVector<f64>,
    range: (f64, f64),
    points: usize,
) -> Result<Vec<EquilibriumReport>> {
    check_dim("degrees of freedom", 1, model.dof())?;
    check_dim("input", model.inputs(), tau_bar.len())?;
    let (lo, hi) = range;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) || points < 2 {
        return Err(Error::InvalidParameter {
            name: "scan range",
            value: hi - lo,
            reason: "needs lo < hi and at least two grid points",
        });
    }
    let f = |q: f64| static_residual(model, tau_bar, &DVector::from_element(1, q))[0];
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&q| f(q)).collect();
    let mut roots: Vec<f64> = Vec::new();
    for i in 0..points - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        let (fa, fb) = (values[i], values[i + 1]);
        let root = if fa == 0.0 {
            Some(a)
        } else if fb == 0.0 {
            Some(b)
        } else if fa.signum() != fb.signum() {
            Some(bisect(f, a, b, fa))
        } else {
            None
        };
        if let Some(root) = root {
            if roots
                .last()
                .is_none_or(|&last| (root - last).abs() > 1e-12 * root.abs().max(1.0))
            {
                roots.push(root);
            }
        }
    }
    roots
        .into_iter()
        .map(|root| {
            let q = DVector::from_element(1, root);
            let residual = static_residual(model, tau_bar, &q).norm();
            report(model, q, tau_bar.clone(), residual, None)
        })
        .collect()
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

/// Input that best holds `q̄` in the least-squares sense, `A^L (K + G)`.
pub fn holding_input(model: &dyn SoftRobot, q_bar: &DVector<f64>) -> Result<DVector<f64>> {
    check_configuration(model, q_bar)?;
    Ok(left_inverse(&model.actuation_matrix(q_bar))? * model.potential_force(q_bar))
}

/// `‖(I − A A^L)(K + G)‖` at `q̄`; zero exactly when some input holds `q̄`.
pub fn attainability(model: &dyn SoftRobot, q_bar: &DVector<f64>) -> Result<f64> {
    check_configuration(model, q_bar)?;
    let a = model.actuation_matrix(q_bar);
    let load = model.potential_force(q_bar);
    let proj = &a * left_inverse(&a)?;
    Ok((&load - proj * &load).norm())
}

/// Local stability of `q̄` held by its holding input, optionally under
/// proportional feedback `τ = τ̄ + α Aᵀ(q̄ − q)` projected through `A α Aᵀ`.
pub fn classify_stability(
    model: &dyn SoftRobot,
    q_bar: &DVector<f64>,
    alpha: Option<&DMatrix<f64>>,
) -> Result<EquilibriumReport> {
    let tau_bar = holding_input(model, q_bar)?;
    let residual = static_residual(model, &tau_bar, q_bar).norm();
    if residual > CLASSIFY_TOL {
        return Err(Error::NotAnEquilibrium { residual });
    }
    report(model, q_bar.clone(), tau_bar, residual, alpha)
}

/// Centered potential plus kinetic energy of the feedforward closed loop:
/// `½q̇ᵀMq̇ + U(q) − U(q̄) + (K(q̄) + G(q̄))ᵀ(q̄ − q)`.
pub fn lyapunov_value(
    model: &dyn SoftRobot,
    state: &RobotState,
    q_bar: &DVector<f64>,
) -> Result<f64> {
    check_dim("state", model.dof(), state.dof())?;
    check_configuration(model, q_bar)?;
    let u = model.potential_energy(&state.q).total() - model.potential_energy(q_bar).total();
    let correction = model.potential_force(q_bar).dot(&(q_bar - &state.q));
    Ok(model.kinetic_energy(state) + u + correction)
}

/// Smallest value of `(U(q) − U(q̄) + (K+G)(q̄)ᵀ(q̄ − q)) / ‖q − q̄‖²` over
/// `samples` random points in the ball of `radius` around `q̄`.
///
/// Positive means the centered potential is positive on the sampled ball.
pub fn sampled_potential_margin(
    model: &dyn SoftRobot,
    q_bar: &DVector<f64>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_configuration(model, q_bar)?;
    let n = model.dof();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut margin = f64::INFINITY;
    for _ in 0..samples {
        let dir: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let r = radius * rng.random_range(0.0f64..1.0).powf(1.0 / n as f64);
        let delta = dir * (r / norm);
        if delta.norm() == 0.0 {
            continue;
        }
        let q = q_bar + &delta;
        let v = lyapunov_value(model, &RobotState::at_rest(q)?, q_bar)?;
        margin = margin.min(v / delta.norm_squared());
    }
    Ok(margin)
}

/// Configuration-space stiffness `∂(K + G)/∂q`, symmetrized.
pub fn config_stiffness(model: &dyn SoftRobot, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_configuration(model, q)?;
    Ok(symmetrize(&fd_jacobian(
        |q| model.potential_force(q),
        q,
        DEFAULT_FD_STEP,
    )?))
}

/// Planar Cartesian stiffness `J ∂(K+G)/∂q Jᵀ` at a backbone point.
pub fn cartesian_stiffness(
    model: &dyn SoftRobot,
    q: &DVector<f64>,
    point: BackbonePoint,
) -> Result<DMatrix<f64>> {
    let h = config_stiffness(model, q)?;
    let j = model.jacobian(point, q)?;
    Ok(&j * h * j.transpose())
}

/// Cartesian compliance `J (∂(K+G)/∂q)⁻¹ Jᵀ`: the small displacement of a
/// point per unit wrench applied there after the robot re-equilibrates.
pub fn cartesian_compliance(
    model: &dyn SoftRobot,
    q: &DVector<f64>,
    point: BackbonePoint,
) -> Result<DMatrix<f64>> {
    let h = config_stiffness(model, q)?;
    let inv = h.try_inverse().ok_or(Error::SingularStiffness)?;
    let j = model.jacobian(point, q)?;
    Ok(&j * inv * j.transpose())
}
