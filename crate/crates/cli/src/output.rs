//! Run directory layout.
//!
//! - `trajectory.csv`: step, dt, r, l, k, l̇, k̇ (raw SI units, momenta not
//!   normalized by mass)
//! - `controls.csv`: one row per active contact and step
//! - `activations.csv`: step, start time, dt and one 0/1 column per end-effector
//! - `report.json`: [`RunReport`], including the per-iteration log

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use centroidal::relax::IterationLog;
use centroidal::{
    KktStats, RefineOutcome, RefinementSettings, RelaxationMode, Scenario, TimeMode,
    ViolationReport,
};

pub const TRAJECTORY: &str = "trajectory.csv";
pub const CONTROLS: &str = "controls.csv";
pub const ACTIVATIONS: &str = "activations.csv";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub scenario_path: PathBuf,
    pub mass: f64,
    pub time_mode: TimeMode,
    pub relaxation_mode: RelaxationMode,
    pub seed: u64,
    pub status: String,
    pub note: Option<String>,
    pub kkt_stats: KktStats,
    pub outer_iterations: usize,
    pub solver_iterations: usize,
    pub total_solve_time: f64,
    pub violation: ViolationReport,
    pub total_duration: f64,
    pub nominal_horizon: f64,
    pub settings: RefinementSettings,
    pub files: Vec<PathBuf>,
    pub iterations: Vec<IterationLog>,
}

pub fn write_run(
    dir: &Path,
    scenario_path: &Path,
    sc: &Scenario,
    settings: &RefinementSettings,
    seed: u64,
    out: &RefineOutcome,
) -> Result<RunReport> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files: Vec<PathBuf> = [TRAJECTORY, CONTROLS, ACTIVATIONS, REPORT]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_trajectory(&files[0], out)?;
    write_controls(&files[1], out)?;
    write_activations(&files[2], sc, &out.trajectory.dt)?;
    let report = RunReport {
        scenario: sc.config.name.clone(),
        scenario_path: scenario_path.to_path_buf(),
        mass: sc.config.mass,
        time_mode: out.report.time_mode,
        relaxation_mode: out.report.relaxation_mode,
        seed,
        status: out.status.to_string(),
        note: out.report.note.clone(),
        kkt_stats: out.report.kkt_stats,
        outer_iterations: out.report.outer_iterations,
        solver_iterations: out.report.solver_iterations,
        total_solve_time: out.report.total_solve_time,
        violation: out.violation,
        total_duration: out.trajectory.total_duration(),
        nominal_horizon: sc.config.nominal_horizon(),
        settings: settings.clone(),
        files: files.clone(),
        iterations: out.log.clone(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&files[3], json + "\n").with_context(|| format!("writing {}", files[3].display()))?;
    Ok(report)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn xyz(name: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{name}_{a}"))
}

fn push3(row: &mut Vec<String>, v: &Vector3<f64>) {
    // `{}` prints the shortest representation that parses back to the same f64.
    row.extend(v.iter().map(|x| format!("{x}")));
}

fn write_trajectory(path: &Path, out: &RefineOutcome) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["step".to_string(), "dt".to_string()];
    for name in ["r", "l", "k", "ldot", "kdot"] {
        header.extend(xyz(name));
    }
    w.write_record(&header)?;
    for (t, (s, dt)) in out.trajectory.states.iter().zip(&out.trajectory.dt).enumerate() {
        let mut row = vec![t.to_string(), format!("{dt}")];
        for v in [&s.r, &s.l, &s.k, &s.ldot, &s.kdot] {
            push3(&mut row, v);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_controls(path: &Path, out: &RefineOutcome) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "eef", "f_x", "f_y", "f_z", "tau", "z_x", "z_y"])?;
    for (t, step) in out.controls.iter().enumerate() {
        for c in &step.contacts {
            let mut row = vec![t.to_string(), c.eef.clone()];
            push3(&mut row, &c.force);
            row.push(format!("{}", c.torque));
            row.push(format!("{}", c.cop.x));
            row.push(format!("{}", c.cop.y));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_activations(path: &Path, sc: &Scenario, dt: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["step".to_string(), "t_start".to_string(), "dt".to_string()];
    header.extend(sc.plan.eef_ids.iter().cloned());
    w.write_record(&header)?;
    let mut t_start = 0.0;
    for (t, d) in dt.iter().enumerate() {
        let active = sc.plan.active_phases(t);
        let mut row = vec![t.to_string(), format!("{t_start}"), format!("{d}")];
        row.extend(sc.plan.eef_ids.iter().map(|id| {
            let on = active.iter().any(|p| &p.eef_id == id);
            (on as u8).to_string()
        }));
        w.write_record(&row)?;
        t_start += d;
    }
    w.flush()?;
    Ok(())
}
