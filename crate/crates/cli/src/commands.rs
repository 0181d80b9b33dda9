//! The subcommands. Each builds its files in memory and commits them at the end.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};
use softpcc::analysis::{classify_stability, scan_equilibria_1d, solve_equilibrium};
use softpcc::control::{ControllerSpec, IlcExperiment};
use softpcc::{EquilibriumReport, Error, RobotState, SoftRobot, Trajectory};

use crate::output::{fmt_f64, Outputs};
use crate::scenario::{ModelKind, Scenario};
use crate::CliError;
use crate::{bundled, load_scenario, Cli, Command, Figure, Panel};

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn out_dir(cli: &Cli, scenario: Option<&Scenario>, fallback: &str) -> PathBuf {
    if let Some(dir) = &cli.out {
        return dir.clone();
    }
    match scenario {
        Some(s) => match &s.output {
            Some(o) => PathBuf::from(&o.dir),
            None => PathBuf::from("out").join(&s.name),
        },
        None => PathBuf::from("out").join(fallback),
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (outputs, dir, lines) = match &cli.command {
        Command::Simulate { file } => {
            let sc = load_scenario(file)?;
            let run = simulate_scenario(&sc, cli.dt, cli.duration)?;
            let mut outputs = Outputs::new();
            let mut lines = run.lines();
            run.stage(&mut outputs, "");
            outputs.add_json("summary.json", &run.summary);
            lines.insert(0, format!("simulated {} for {} s", sc.name, run.duration));
            (outputs, out_dir(cli, Some(&sc), ""), lines)
        }
        Command::Equilibria { file } => {
            let sc = load_scenario(file)?;
            let (outputs, lines) = equilibria(&sc)?;
            (outputs, out_dir(cli, Some(&sc), ""), lines)
        }
        Command::Stability { file } => {
            let sc = load_scenario(file)?;
            let (outputs, lines) = stability(&sc)?;
            (outputs, out_dir(cli, Some(&sc), ""), lines)
        }
        Command::Reproduce {
            figure: Figure::CcEvolution { panel },
        } => {
            let panels = match panel {
                Some(p) => vec![*p],
                None => vec![Panel::A, Panel::B, Panel::C],
            };
            let (outputs, lines) = cc_evolution(&panels, cli.dt, cli.duration)?;
            (outputs, out_dir(cli, None, "cc_evolution"), lines)
        }
        Command::Sweep { file } => {
            let sc = load_scenario(file)?;
            let (outputs, lines) = sweep(&sc, cli.dt, cli.duration)?;
            (outputs, out_dir(cli, Some(&sc), ""), lines)
        }
    };
    let written = outputs.commit(&dir)?;
    for line in lines {
        let _ = writeln!(stdout, "{line}");
    }
    let _ = writeln!(
        stdout,
        "wrote {} file(s) to {}",
        written.len(),
        dir.display()
    );
    Ok(())
}

/// Result of one `simulate` run.
pub struct SimulationRun {
    pub trajectory: Trajectory,
    pub ilc_rms: Option<Vec<f64>>,
    pub summary: Value,
    pub duration: f64,
}

impl SimulationRun {
    pub fn final_q(&self) -> &DVector<f64> {
        &self.trajectory.last_state().q
    }

    fn stage(&self, outputs: &mut Outputs, prefix: &str) {
        outputs.add(
            format!("{prefix}trajectory.csv"),
            trajectory_csv(&self.trajectory),
        );
        if let Some(rms) = &self.ilc_rms {
            let mut text = String::from("iteration,rms_error\n");
            for (i, e) in rms.iter().enumerate() {
                text.push_str(&format!("{},{}\n", i + 1, fmt_f64(*e)));
            }
            outputs.add(format!("{prefix}ilc.csv"), text);
        }
    }

    fn lines(&self) -> Vec<String> {
        let mut lines = vec![format!("final q = {:?}", vec_of(self.final_q()))];
        if let Some(rms) = &self.ilc_rms {
            lines.push(format!(
                "ilc rms error: first {:.6e}, last {:.6e}",
                rms.first().copied().unwrap_or(f64::NAN),
                rms.last().copied().unwrap_or(f64::NAN)
            ));
        }
        lines
    }
}

pub fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)
        .expect("writing to memory cannot fail");
    buf
}

fn report_json(r: &EquilibriumReport) -> Value {
    json!({
        "q_bar_rad": vec_of(&r.q_bar),
        "tau_bar_Nm": vec_of(&r.tau_bar),
        "residual": r.residual,
        "min_eigenvalue": r.min_eigenvalue,
        "verdict": r.verdict.to_string(),
    })
}

fn state_json(model: &dyn SoftRobot, t: f64, state: &RobotState) -> Value {
    let e = softpcc::Energy::of(model, state);
    json!({
        "t_s": t,
        "q_rad": vec_of(&state.q),
        "qdot_radps": vec_of(&state.qdot),
        "E_kin": e.kinetic,
        "U_K": e.elastic,
        "U_G": e.gravity,
        "E_tot": e.total,
    })
}

/// Feedback gain seen by the configuration, for classifying a set-point.
fn set_point_alpha(spec: &ControllerSpec) -> Option<&DMatrix<f64>> {
    match spec {
        ControllerSpec::PdSetpoint { alpha, .. } | ControllerSpec::UaPd { alpha, .. } => {
            Some(alpha)
        }
        _ => None,
    }
}

pub fn simulate_scenario(
    sc: &Scenario,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<SimulationRun, CliError> {
    let model = sc.build_model()?;
    let spec = sc.controller_spec(model.as_ref())?;
    let sim = sc.simulator(dt, duration)?;
    let contacts = sc.contacts(model.as_ref())?;
    let (trajectory, ilc_rms) = if let ControllerSpec::Ilc {
        reference,
        gamma,
        iterations,
    } = &spec
    {
        if !contacts.is_empty() {
            return Err(CliError::Schema(
                "contacts: learning control runs without external contacts".into(),
            ));
        }
        let mut exp = IlcExperiment::new(model.clone(), reference.build(), gamma.clone(), sim)
            .map_err(|e| CliError::Schema(format!("controller: {e}")))?;
        let mut rms = Vec::with_capacity(*iterations);
        let mut last = None;
        for _ in 0..*iterations {
            let it = exp.run_iteration()?;
            rms.push(it.rms_error);
            last = Some(it.trajectory);
        }
        (last.expect("at least one iteration"), Some(rms))
    } else {
        let controller = spec.build(model.clone())?;
        let initial = sc.initial_state(model.as_ref())?;
        (
            sim.run(model.as_ref(), controller.as_ref(), &initial, &contacts)?,
            None,
        )
    };

    let last = trajectory.last_state();
    let t_end = *trajectory.times.last().expect("non-empty trajectory");
    let mut results = serde_json::Map::new();
    if let Some(q_bar) = spec.set_point() {
        let verdict = classify_stability(model.as_ref(), q_bar, set_point_alpha(&spec))
            .map(|r| Value::String(r.verdict.to_string()))
            .unwrap_or(Value::Null);
        results.insert(
            "set_point".into(),
            json!({
                "q_bar_rad": vec_of(q_bar),
                "final_error_rad": (q_bar - &last.q).norm(),
                "verdict": verdict,
            }),
        );
    }
    if let Some(reference) = spec.reference() {
        let r = reference.build();
        let errs: Vec<f64> = trajectory
            .times
            .iter()
            .zip(&trajectory.states)
            .map(|(&t, s)| (r.sample(t).q - &s.q).norm_squared())
            .collect();
        let rms = (errs.iter().sum::<f64>() / errs.len() as f64).sqrt();
        results.insert(
            "tracking".into(),
            json!({
                "rms_error_rad": rms,
                "final_error_rad": errs.last().copied().unwrap_or(0.0).sqrt(),
            }),
        );
    }
    match &spec {
        ControllerSpec::KinematicTask {
            point, task, x_bar, ..
        }
        | ControllerSpec::OperationalSpace {
            point, task, x_bar, ..
        } => {
            let x = task.task_value(model.as_ref(), *point, &last.q)?;
            results.insert(
                "task".into(),
                json!({
                    "x_bar": vec_of(x_bar),
                    "x_final": vec_of(&x),
                    "final_error": (x_bar - &x).norm(),
                }),
            );
        }
        ControllerSpec::Constant { tau } if contacts.is_empty() => {
            let eq = solve_equilibrium(model.as_ref(), tau, &last.q)
                .map(|r| {
                    let mut v = report_json(&r);
                    v["final_error_rad"] = json!((&r.q_bar - &last.q).norm());
                    v
                })
                .unwrap_or(Value::Null);
            results.insert("equilibrium".into(), eq);
        }
        _ => {}
    }
    if let Some(rms) = &ilc_rms {
        results.insert("ilc_rms_error_rad".into(), json!(rms));
    }

    let summary = json!({
        "scenario": sc.name,
        "command": "simulate",
        "model": sc.model.kind.as_str(),
        "dof": model.dof(),
        "inputs": model.inputs(),
        "dt_s": sim.dt,
        "duration_s": sim.duration,
        "steps": sim.steps(),
        "final": state_json(model.as_ref(), t_end, last),
        "results": Value::Object(results),
    });
    Ok(SimulationRun {
        trajectory,
        ilc_rms,
        summary,
        duration: sim.duration,
    })
}

/// Equilibria ordered by distance from the straight configuration, ties by value.
fn order_equilibria(reports: &mut [EquilibriumReport]) {
    reports.sort_by(|a, b| {
        a.q_bar.norm().total_cmp(&b.q_bar.norm()).then_with(|| {
            a.q_bar
                .iter()
                .partial_cmp(b.q_bar.iter())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
}

pub fn find_equilibria(sc: &Scenario) -> Result<(Vec<EquilibriumReport>, Vec<Value>), CliError> {
    let section = sc.equilibria.as_ref().ok_or_else(|| {
        CliError::Schema("equilibria: section is required for this command".into())
    })?;
    let model = sc.build_model()?;
    let tau = DVector::from_column_slice(&section.tau_bar);
    let mut failures = Vec::new();
    let mut found: Vec<EquilibriumReport> = if model.dof() == 1 && section.guesses_rad.is_empty() {
        scan_equilibria_1d(
            model.as_ref(),
            &tau,
            (section.q_min_rad, section.q_max_rad),
            section.grid_points,
        )?
    } else {
        if section.guesses_rad.is_empty() {
            return Err(CliError::Schema(
                "equilibria.guesses_rad: multi-dof models need at least one starting point".into(),
            ));
        }
        let mut found: Vec<EquilibriumReport> = Vec::new();
        let mut last_err = None;
        for g in &section.guesses_rad {
            match solve_equilibrium(model.as_ref(), &tau, &DVector::from_column_slice(g)) {
                Ok(r) => {
                    if !found.iter().any(|f| (&f.q_bar - &r.q_bar).norm() < 1e-6) {
                        found.push(r);
                    }
                }
                Err(e @ Error::NonConvergence { .. }) => {
                    failures.push(json!({ "guess_rad": g, "error": e.to_string() }));
                    last_err = Some(e);
                }
                Err(e) => return Err(e.into()),
            }
        }
        if found.is_empty() {
            return Err(last_err.expect("every guess failed").into());
        }
        found
    };
    order_equilibria(&mut found);
    Ok((found, failures))
}

fn equilibria(sc: &Scenario) -> Result<(Outputs, Vec<String>), CliError> {
    let (found, failures) = find_equilibria(sc)?;
    let n = sc.build_model()?.dof();
    let mut csv = String::from("index");
    for i in 1..=n {
        csv.push_str(&format!(",q{i}"));
    }
    csv.push_str(",residual,min_eigenvalue,verdict\n");
    let mut lines = Vec::new();
    for (k, r) in found.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(r.q_bar.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(r.residual));
        row.push(fmt_f64(r.min_eigenvalue));
        row.push(r.verdict.to_string());
        csv.push_str(&row.join(","));
        csv.push('\n');
        lines.push(format!(
            "equilibrium {k}: q = {:?} {}",
            vec_of(&r.q_bar),
            r.verdict
        ));
    }
    let mut outputs = Outputs::new();
    outputs.add("equilibria.csv", csv);
    outputs.add_json(
        "summary.json",
        &json!({
            "scenario": sc.name,
            "command": "equilibria",
            "model": sc.model.kind.as_str(),
            "count": found.len(),
            "equilibria": found.iter().map(report_json).collect::<Vec<_>>(),
            "failed_guesses": failures,
        }),
    );
    Ok((outputs, lines))
}

fn stability(sc: &Scenario) -> Result<(Outputs, Vec<String>), CliError> {
    let section = sc.stability.as_ref().ok_or_else(|| {
        CliError::Schema("stability: section is required for this command".into())
    })?;
    let model = sc.build_model()?;
    let (n, m) = (model.dof(), model.inputs());
    let alpha = section
        .alpha
        .as_ref()
        .map(|a| a.to_matrix(m, m, "stability.alpha_Nm_per_rad"))
        .transpose()?;
    let mut csv = String::from("index");
    for i in 1..=n {
        csv.push_str(&format!(",q{i}"));
    }
    for i in 1..=m {
        csv.push_str(&format!(",tau{i}"));
    }
    csv.push_str(",residual,min_eigenvalue,verdict\n");
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (k, q) in section.q_bar_rad.iter().enumerate() {
        let q_bar = DVector::from_column_slice(q);
        let mut row = vec![k.to_string()];
        row.extend(q.iter().map(|v| fmt_f64(*v)));
        match classify_stability(model.as_ref(), &q_bar, alpha.as_ref()) {
            Ok(r) => {
                row.extend(r.tau_bar.iter().map(|v| fmt_f64(*v)));
                row.extend([
                    fmt_f64(r.residual),
                    fmt_f64(r.min_eigenvalue),
                    r.verdict.to_string(),
                ]);
                lines.push(format!("q = {q:?}: {}", r.verdict));
                entries.push(report_json(&r));
            }
            Err(
                Error::NotAnEquilibrium { residual } | Error::UnattainableEquilibrium { residual },
            ) => {
                row.extend(std::iter::repeat_n(String::new(), m));
                row.extend([fmt_f64(residual), String::new(), "unattainable".to_string()]);
                lines.push(format!("q = {q:?}: unattainable (residual {residual:e})"));
                entries.push(
                    json!({ "q_bar_rad": q, "residual": residual, "verdict": "unattainable" }),
                );
            }
            Err(e) => return Err(e.into()),
        }
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let mut outputs = Outputs::new();
    outputs.add("stability.csv", csv);
    outputs.add_json(
        "summary.json",
        &json!({
            "scenario": sc.name,
            "command": "stability",
            "model": sc.model.kind.as_str(),
            "classifications": entries,
        }),
    );
    Ok((outputs, lines))
}

/// Models compared in the step-response figure.
pub const EVOLUTION_MODELS: [ModelKind; 3] = [ModelKind::Cc, ModelKind::RigidPea, ModelKind::Rigid];

pub fn evolution_scenario(panel: Panel, kind: ModelKind) -> Scenario {
    let name = format!("cc_fig_evolution_{}", panel.letter());
    let text = bundled(&name).expect("figure scenarios are bundled");
    let mut sc = Scenario::parse(text).expect("bundled scenarios are valid");
    sc.model.kind = kind;
    sc
}

fn cc_evolution(
    panels: &[Panel],
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<(Outputs, Vec<String>), CliError> {
    let jobs: Vec<(Panel, ModelKind)> = panels
        .iter()
        .flat_map(|&p| EVOLUTION_MODELS.iter().map(move |&k| (p, k)))
        .collect();
    let runs: Vec<Result<SimulationRun, CliError>> = jobs
        .par_iter()
        .map(|&(p, k)| simulate_scenario(&evolution_scenario(p, k), dt, duration))
        .collect();
    let mut outputs = Outputs::new();
    let mut lines = Vec::new();
    let mut panel_summaries = serde_json::Map::new();
    for (&(p, k), run) in jobs.iter().zip(runs) {
        let run = run?;
        let dir = format!("panel_{}/", p.letter());
        outputs.add(
            format!("{dir}{}.csv", k.as_str()),
            trajectory_csv(&run.trajectory),
        );
        lines.push(format!(
            "panel {} {}: final q = {:.6}",
            p.letter(),
            k.as_str(),
            run.final_q()[0]
        ));
        let entry = panel_summaries
            .entry(format!("panel_{}", p.letter()))
            .or_insert_with(|| json!({}));
        entry[k.as_str()] = json!({
            "final": run.summary["final"].clone(),
            "equilibrium": run.summary["results"]["equilibrium"].clone(),
        });
    }
    outputs.add_json(
        "summary.json",
        &json!({ "command": "reproduce cc-evolution", "panels": Value::Object(panel_summaries) }),
    );
    Ok((outputs, lines))
}

fn sweep(
    sc: &Scenario,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<(Outputs, Vec<String>), CliError> {
    let section = sc
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Schema("sweep: section is required for this command".into()))?;
    if matches!(
        sc.controller,
        Some(crate::scenario::ControllerSection::Ilc { .. })
    ) {
        return Err(CliError::Schema(
            "sweep: learning control scenarios cannot be swept".into(),
        ));
    }
    let cells: Vec<Scenario> = section
        .values
        .iter()
        .map(|&v| sc.with_parameter(section.parameter, section.segment, v))
        .collect();
    let runs: Vec<Result<SimulationRun, CliError>> = cells
        .par_iter()
        .map(|cell| simulate_scenario(cell, dt, duration))
        .collect();
    let n = sc.build_model()?.dof();
    let mut index = format!("cell,{},file", section.parameter.as_str());
    for i in 1..=n {
        index.push_str(&format!(",q{i}_final"));
    }
    index.push('\n');
    let mut outputs = Outputs::new();
    let mut summaries = Vec::new();
    for (k, (&value, run)) in section.values.iter().zip(runs).enumerate() {
        let run = run?;
        let file = format!("cell_{k:03}.csv");
        let mut row = vec![k.to_string(), fmt_f64(value), file.clone()];
        row.extend(run.final_q().iter().map(|v| fmt_f64(*v)));
        index.push_str(&row.join(","));
        index.push('\n');
        outputs.add(file, trajectory_csv(&run.trajectory));
        summaries.push(json!({ "cell": k, "value": value, "summary": run.summary }));
    }
    outputs.add("index.csv", index);
    outputs.add_json(
        "summary.json",
        &json!({
            "scenario": sc.name,
            "command": "sweep",
            "parameter": section.parameter.as_str(),
            "segment": section.segment,
            "cells": summaries,
        }),
    );
    let lines = vec![format!(
        "swept {} over {} value(s)",
        section.parameter.as_str(),
        section.values.len()
    )];
    Ok((outputs, lines))
}
