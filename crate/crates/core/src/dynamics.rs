//! Exact discrete centroidal dynamics.
//!
//! This is the reference the relaxed solutions are audited against: forward
//! integration of forces/torques/CoPs, physical-constraint checks and the
//! relaxed-vs-integrated discrepancy metrics.
//!
//! The recursion evaluated per step `t` (with `t - 1` the previous step or the
//! initial state) is
//!
//! ```text
//! l̇_t = m g + Σ_e f_e
//! l_t = l_{t-1} + l̇_t Δ_t
//! r_t = r_{t-1} + l_t Δ_t / m
//! k̇_t = Σ_e κ_e(r_t)
//! k_t = k_{t-1} + k̇_t Δ_t
//! ```
//!
//! It is implicit in `l_t` and `r_t` but explicit in the order above.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContactPhase, ContactPlan, InitialState, ScenarioConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("expected {expected} control steps, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("step {step}: control given for inactive end-effector '{eef}'")]
    InactiveControl { step: usize, eef: String },
    #[error("step {step}: missing control for active end-effector '{eef}'")]
    MissingControl { step: usize, eef: String },
    #[error("step {step}: timestep durations differ between trajectory and controls")]
    DtMismatch { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidalState {
    pub r: Vector3<f64>,
    pub l: Vector3<f64>,
    pub k: Vector3<f64>,
    pub ldot: Vector3<f64>,
    pub kdot: Vector3<f64>,
}

/// Wrench applied by one end-effector during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactControl {
    pub eef: String,
    /// World frame.
    pub force: Vector3<f64>,
    /// About the contact-frame z axis.
    pub torque: f64,
    /// Center of pressure in contact-frame coordinates.
    pub cop: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlStep {
    pub dt: f64,
    pub contacts: Vec<ContactControl>,
}

impl ControlStep {
    pub fn contact(&self, eef: &str) -> Option<&ContactControl> {
        self.contacts.iter().find(|c| c.eef == eef)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidalTrajectory {
    pub states: Vec<CentroidalState>,
    pub dt: Vec<f64>,
}

impl CentroidalTrajectory {
    pub fn total_duration(&self) -> f64 {
        self.dt.iter().sum()
    }
}

/// Contribution of one contact to the angular momentum rate about the CoM:
/// `(p + R[:, 0..2] z - r) × f + R[:, 2] τ`.
pub fn kappa_e(
    position: &Vector3<f64>,
    rotation: &Matrix3<f64>,
    cop: &Vector2<f64>,
    com: &Vector3<f64>,
    force: &Vector3<f64>,
    torque: f64,
) -> Vector3<f64> {
    let lever = lever_arm(position, rotation, cop, com);
    lever.cross(force) + rotation.column(2) * torque
}

/// Contact point relative to the CoM.
pub fn lever_arm(
    position: &Vector3<f64>,
    rotation: &Matrix3<f64>,
    cop: &Vector2<f64>,
    com: &Vector3<f64>,
) -> Vector3<f64> {
    position + rotation.column(0) * cop.x + rotation.column(1) * cop.y - com
}

/// Pairs each active phase at `step` with its control.
fn step_contacts<'a>(
    step: usize,
    control: &'a ControlStep,
    plan: &'a ContactPlan,
) -> Result<Vec<(&'a ContactPhase, &'a ContactControl)>, DynamicsError> {
    let active = plan.active_phases(step);
    for c in &control.contacts {
        if !active.iter().any(|p| p.eef_id == c.eef) {
            return Err(DynamicsError::InactiveControl {
                step,
                eef: c.eef.clone(),
            });
        }
    }
    active
        .into_iter()
        .map(|phase| {
            control
                .contact(&phase.eef_id)
                .map(|c| (phase, c))
                .ok_or_else(|| DynamicsError::MissingControl {
                    step,
                    eef: phase.eef_id.clone(),
                })
        })
        .collect()
}

/// Integrates the exact dynamics for `controls` from the initial state.
pub fn integrate(
    initial: &InitialState,
    controls: &[ControlStep],
    plan: &ContactPlan,
    cfg: &ScenarioConfig,
) -> Result<Vec<CentroidalState>, DynamicsError> {
    integrate_with_lever_com(initial, controls, plan, cfg, None)
}

/// Like [`integrate`], but the lever arms of the angular momentum rate are
/// taken about `lever_com[t]` instead of the integrated CoM when given.
pub fn integrate_with_lever_com(
    initial: &InitialState,
    controls: &[ControlStep],
    plan: &ContactPlan,
    cfg: &ScenarioConfig,
    lever_com: Option<&[Vector3<f64>]>,
) -> Result<Vec<CentroidalState>, DynamicsError> {
    if controls.len() != cfg.n_timesteps {
        return Err(DynamicsError::LengthMismatch {
            expected: cfg.n_timesteps,
            got: controls.len(),
        });
    }
    if let Some(coms) = lever_com {
        if coms.len() != controls.len() {
            return Err(DynamicsError::LengthMismatch {
                expected: controls.len(),
                got: coms.len(),
            });
        }
    }
    let m = cfg.mass;
    let mut r = initial.com;
    let mut l = initial.lin_momentum;
    let mut k = initial.ang_momentum;
    let mut states = Vec::with_capacity(controls.len());
    for (t, control) in controls.iter().enumerate() {
        let contacts = step_contacts(t, control, plan)?;
        let dt = control.dt;
        let ldot = contacts
            .iter()
            .fold(cfg.gravity * m, |acc, (_, c)| acc + c.force);
        l += ldot * dt;
        r += l * (dt / m);
        let lever_ref = lever_com.map_or(r, |coms| coms[t]);
        let kdot = contacts.iter().fold(Vector3::zeros(), |acc, (phase, c)| {
            acc + kappa_e(
                &phase.position,
                &phase.rotation(),
                &c.cop,
                &lever_ref,
                &c.force,
                c.torque,
            )
        });
        k += kdot * dt;
        states.push(CentroidalState { r, l, k, ldot, kdot });
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    FrictionCone,
    UnilateralForce,
    CopBounds,
    TorqueBounds,
    DtBounds,
    Reach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub eef: Option<String>,
    pub kind: ConstraintKind,
    pub magnitude: f64,
}

/// Lists every physical constraint violated by more than `tol`: friction
/// cones and unilaterality in the contact frame, CoP and torque boxes,
/// timestep bounds and end-effector reach.
pub fn check_physical(
    controls: &[ControlStep],
    plan: &ContactPlan,
    cfg: &ScenarioConfig,
    states: &[CentroidalState],
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |step: usize, eef: Option<&str>, kind: ConstraintKind, magnitude: f64| {
        if magnitude > tol {
            out.push(Violation {
                step,
                eef: eef.map(str::to_string),
                kind,
                magnitude,
            });
        }
    };
    for (t, control) in controls.iter().enumerate() {
        push(t, None, ConstraintKind::DtBounds, cfg.dt_bounds.excess(control.dt));
        for phase in plan.active_phases(t) {
            let Some(c) = control.contact(&phase.eef_id) else {
                continue;
            };
            let eef = Some(phase.eef_id.as_str());
            let local = phase.rotation().transpose() * c.force;
            let tangential = local.x.hypot(local.y);
            push(
                t,
                eef,
                ConstraintKind::FrictionCone,
                tangential - cfg.friction_mu * local.z,
            );
            push(t, eef, ConstraintKind::UnilateralForce, -local.z);
            let cop_excess = cfg.cop_bounds[0]
                .excess(c.cop.x)
                .max(cfg.cop_bounds[1].excess(c.cop.y));
            push(t, eef, ConstraintKind::CopBounds, cop_excess);
            push(t, eef, ConstraintKind::TorqueBounds, cfg.torque_bounds.excess(c.torque));
            if let (Some(state), Some(limits)) = (states.get(t), cfg.end_effector(&phase.eef_id)) {
                let dist = (phase.position - state.r).norm();
                push(t, eef, ConstraintKind::Reach, dist - limits.reach());
            }
        }
    }
    out
}

/// Discrepancy between a relaxed trajectory and the exact integration of its
/// controls. Per-step 2-norm errors, averaged and maximized over steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationReport {
    pub com_err: f64,
    pub lin_err: f64,
    pub ang_err: f64,
    pub com_err_max: f64,
    pub lin_err_max: f64,
    pub ang_err_max: f64,
}

/// Audits `relaxed` against the exact integration of `controls`.
///
/// Lever arms use the relaxed CoM, so the audit measures the error of the
/// bilinear approximations rather than a re-derived contact geometry.
pub fn violation_metrics(
    initial: &InitialState,
    relaxed: &CentroidalTrajectory,
    controls: &[ControlStep],
    plan: &ContactPlan,
    cfg: &ScenarioConfig,
) -> Result<ViolationReport, DynamicsError> {
    if relaxed.states.len() != controls.len() || relaxed.dt.len() != controls.len() {
        return Err(DynamicsError::LengthMismatch {
            expected: controls.len(),
            got: relaxed.states.len().min(relaxed.dt.len()),
        });
    }
    if let Some(step) = relaxed
        .dt
        .iter()
        .zip(controls)
        .position(|(dt, c)| *dt != c.dt)
    {
        return Err(DynamicsError::DtMismatch { step });
    }
    let coms: Vec<Vector3<f64>> = relaxed.states.iter().map(|s| s.r).collect();
    let exact = integrate_with_lever_com(initial, controls, plan, cfg, Some(&coms))?;
    let mut report = ViolationReport::default();
    if exact.is_empty() {
        return Ok(report);
    }
    for (a, b) in relaxed.states.iter().zip(&exact) {
        let (dc, dl, dk) = ((a.r - b.r).norm(), (a.l - b.l).norm(), (a.k - b.k).norm());
        report.com_err += dc;
        report.lin_err += dl;
        report.ang_err += dk;
        report.com_err_max = report.com_err_max.max(dc);
        report.lin_err_max = report.lin_err_max.max(dl);
        report.ang_err_max = report.ang_err_max.max(dk);
    }
    let n = exact.len() as f64;
    report.com_err /= n;
    report.lin_err /= n;
    report.ang_err /= n;
    Ok(report)
}
