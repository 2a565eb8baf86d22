//! Relaxed problem assembly and the trust-region / soft-penalty refinement
//! loop.

mod build;
mod layout;

use std::path::PathBuf;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

pub use build::{
    add_soft_penalties, add_trust_regions, aux_gap_range, build_convex_relaxation, build_program,
    decode, polish_auxiliaries, TimeTreatment,
};
pub use layout::{Epigraph, PairKey, RelaxedProblemLayout, Side, TimeProduct, VarKey};

use crate::conic::{kkt_stats, ConicBackend, ConicProgram, InteriorPoint, KktStats, LinExpr, SolveStatus};
use crate::dynamics::{violation_metrics, CentroidalTrajectory, ControlStep, ViolationReport};
use crate::model::{RelaxationMode, Scenario, TimeMode};

/// Auxiliaries are snapped onto their bounds when the move is below this
/// multiple of the solver tolerance (relative to `1 + |p̄|`).
const POLISH_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelaxError {
    #[error("invalid refinement settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Conic(#[from] crate::conic::ConicError),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error("writing {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub com: f64,
    pub lin: f64,
    pub ang: f64,
}

impl Thresholds {
    pub fn met(&self, r: &ViolationReport) -> bool {
        r.com_err < self.com && r.lin_err < self.lin && r.ang_err < self.ang
    }

    /// Largest ratio of error to threshold.
    pub fn score(&self, r: &ViolationReport) -> f64 {
        (r.com_err / self.com)
            .max(r.lin_err / self.lin)
            .max(r.ang_err / self.ang)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementSettings {
    pub sigma0: f64,
    pub sigma_shrink: f64,
    /// Trust widths stop shrinking here; much thinner slabs leave the
    /// interior-point solver without an interior.
    pub sigma_min: f64,
    pub w0: f64,
    pub w_growth: f64,
    /// Upper bound on the soft penalty weight.
    pub w_max: f64,
    /// Outer iterations, the convex-only solve included.
    pub max_outer: usize,
    pub conv_thresholds: Thresholds,
    pub phase2_enabled: bool,
    /// Phase two starts once the CoM and linear momentum errors are below
    /// this multiple of their thresholds.
    pub phase2_factor: f64,
    /// Trust width growth after an infeasible trust-region solve.
    pub infeasibility_backoff: f64,
    /// Weight of `Σ (p̄ + q̄)` in the convex-only solve, which otherwise has
    /// an unbounded optimal face.
    pub tie_break: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Writes every cone program solved to this directory in the dump format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_dir: Option<PathBuf>,
}

impl Default for RefinementSettings {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            sigma_shrink: 0.5,
            sigma_min: 1e-6,
            w0: 0.05,
            w_growth: 5.0,
            w_max: 1e6,
            max_outer: 20,
            conv_thresholds: Thresholds {
                com: 1e-6,
                lin: 1e-5,
                ang: 1e-2,
            },
            phase2_enabled: true,
            phase2_factor: 1e3,
            infeasibility_backoff: 4.0,
            tie_break: 1e-4,
            solver_tol: 1e-7,
            solver_max_iter: 200,
            dump_dir: None,
        }
    }
}

impl RefinementSettings {
    /// Defaults with the starting trust width and penalty weight taken from
    /// the scenario's cost section.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let w = &scenario.config.cost_weights;
        Self {
            sigma0: w.trust_sigma0,
            w0: w.soft_penalty_w0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RelaxError> {
        let bad = |m: &str| Err(RelaxError::Settings(m.to_string()));
        if !(self.sigma0 > 0.0) {
            return bad("sigma0 must be positive");
        }
        if !(self.sigma_shrink > 0.0 && self.sigma_shrink < 1.0) {
            return bad("sigma_shrink must lie in (0, 1)");
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma0) {
            return bad("sigma_min must lie in (0, sigma0]");
        }
        if !(self.w0 >= 0.0) {
            return bad("w0 must be nonnegative");
        }
        if !(self.w_growth > 1.0) {
            return bad("w_growth must exceed 1");
        }
        let t = &self.conv_thresholds;
        if !(t.com > 0.0 && t.lin > 0.0 && t.ang > 0.0) {
            return bad("thresholds must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1");
        }
        if !(self.infeasibility_backoff >= 1.0) {
            return bad("infeasibility_backoff must be at least 1");
        }
        if !(self.solver_tol > 0.0) {
            return bad("solver_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Converged,
    NotConverged,
    Infeasible,
}

impl std::fmt::Display for RefineStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::NotConverged => "not_converged",
            Self::Infeasible => "infeasible",
        })
    }
}

/// One line of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub phase: u8,
    pub sigma: Option<f64>,
    pub w: Option<f64>,
    pub solver_status: SolveStatus,
    pub solver_iterations: usize,
    pub solve_time: f64,
    pub objective: f64,
    pub com_err: Option<f64>,
    pub lin_err: Option<f64>,
    pub ang_err: Option<f64>,
    /// Range of `p̄ − ‖p‖²` over all auxiliaries.
    pub aux_gap_min: Option<f64>,
    pub aux_gap_max: Option<f64>,
    /// Largest change made when snapping auxiliaries onto their bounds.
    pub aux_polish: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub time_mode: TimeMode,
    pub relaxation_mode: RelaxationMode,
    /// Size of the convex relaxation.
    pub kkt_stats: KktStats,
    pub outer_iterations: usize,
    pub solver_iterations: usize,
    pub total_solve_time: f64,
    pub best_iteration: Option<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub status: RefineStatus,
    pub trajectory: CentroidalTrajectory,
    pub controls: Vec<ControlStep>,
    pub violation: ViolationReport,
    pub report: SolveReport,
    pub log: Vec<IterationLog>,
}

struct Accepted {
    iteration: usize,
    trajectory: CentroidalTrajectory,
    controls: Vec<ControlStep>,
    violation: ViolationReport,
}

fn tie_break(prog: &ConicProgram, layout: &RelaxedProblemLayout, eps: f64) -> ConicProgram {
    if eps == 0.0 {
        return prog.clone();
    }
    let mut b = prog.to_builder();
    for (_, pair) in &layout.pairs {
        b.add_objective(&(LinExpr::term(pair.pbar, eps) + LinExpr::term(pair.qbar, eps)));
    }
    b.finish()
}

/// Runs the refinement with the built-in solver.
pub fn refine(scenario: &Scenario, settings: &RefinementSettings) -> Result<RefineOutcome, RelaxError> {
    let backend = InteriorPoint::new(settings.solver_tol, settings.solver_max_iter);
    refine_with(scenario, settings, &backend)
}

/// Runs the refinement: a convex-only solve, then repeated solves with trust
/// regions or soft penalties around the previous solution until the audit
/// errors fall below the thresholds.
pub fn refine_with(
    scenario: &Scenario,
    settings: &RefinementSettings,
    backend: &dyn ConicBackend,
) -> Result<RefineOutcome, RelaxError> {
    settings.validate()?;
    let cfg = &scenario.config;
    let mode = cfg.time_mode;
    let relaxation = cfg.relaxation_mode;
    let thr = settings.conv_thresholds;
    let started = Instant::now();

    let (prog0, layout0) = build_convex_relaxation(scenario, mode);
    let stats = kkt_stats(&prog0);
    info!(
        "{}: {} variables, {} equalities, {} inequalities, {} cones",
        cfg.name, stats.variables, stats.lin_eq, stats.lin_ineq, stats.soc_count
    );
    let mut report = SolveReport {
        time_mode: mode,
        relaxation_mode: relaxation,
        kkt_stats: stats,
        outer_iterations: 0,
        solver_iterations: 0,
        total_solve_time: 0.0,
        best_iteration: None,
        note: None,
    };
    let mut log: Vec<IterationLog> = Vec::new();
    let mut best: Option<Accepted> = None;

    let finish = |status: RefineStatus,
                  best: Option<Accepted>,
                  mut report: SolveReport,
                  log: Vec<IterationLog>| {
        report.best_iteration = best.as_ref().map(|b| b.iteration);
        report.outer_iterations = log.iter().filter(|l| l.accepted).count();
        let (trajectory, controls, violation) = match best {
            Some(b) => (b.trajectory, b.controls, b.violation),
            None => (CentroidalTrajectory::default(), Vec::new(), ViolationReport::default()),
        };
        let wall = started.elapsed().as_secs_f64();
        debug!("refine finished in {wall:.3} s ({:.3} s in the solver)", report.total_solve_time);
        RefineOutcome {
            status,
            trajectory,
            controls,
            violation,
            report,
            log,
        }
    };

    // Convex-only solve.
    let prog0 = tie_break(&prog0, &layout0, settings.tie_break);
    dump(settings, &prog0, "iter_00")?;
    let sol = backend.solve(&prog0)?;
    report.solver_iterations += sol.iterations;
    report.total_solve_time += sol.solve_time;
    if !sol.status.is_optimal() {
        let entry = iteration_entry(0, 1, None, None, &sol, None, None, false);
        emit(&entry);
        log.push(entry);
        report.note = Some(format!("convex relaxation: {}", sol.status));
        let status = if matches!(sol.status, SolveStatus::PrimalInfeasible) {
            RefineStatus::Infeasible
        } else {
            RefineStatus::NotConverged
        };
        return Ok(finish(status, best, report, log));
    }

    let polish_tol = POLISH_FACTOR * settings.solver_tol;
    let mut layout = layout0;
    let mut prior = sol.x.clone();
    let moved = polish_auxiliaries(&layout, &mut prior, None, polish_tol);
    let (traj, controls) = decode(scenario, &layout, &prior);
    let violation = violation_metrics(&scenario.initial, &traj, &controls, &scenario.plan, cfg)?;
    let mut entry = iteration_entry(0, 1, None, None, &sol, Some(&violation), aux_gap_range(&layout, &prior), true);
    entry.aux_polish = Some(moved);
    emit(&entry);
    log.push(entry);
    let mut last = violation;
    best = Some(Accepted {
        iteration: 0,
        trajectory: traj,
        controls,
        violation,
    });

    let mut sigma = settings.sigma0;
    let mut w = settings.w0;
    let mut phase = 1u8;
    let mut converged = thr.met(&last);

    for iteration in 1..settings.max_outer {
        if converged {
            break;
        }
        if phase == 1
            && mode.optimizes_time()
            && settings.phase2_enabled
            && last.com_err < settings.phase2_factor * thr.com
            && last.lin_err < settings.phase2_factor * thr.lin
        {
            info!("iteration {iteration}: switching to linearized timestep products");
            phase = 2;
        }

        let mut attempt = 0;
        let outcome = loop {
            let (base, new_layout) = if phase == 2 {
                let radius = sigma * cfg.nominal_dt;
                build_program(
                    scenario,
                    mode,
                    TimeTreatment::Linearized {
                        layout: &layout,
                        x: &prior,
                        radius,
                    },
                )
            } else {
                build_convex_relaxation(scenario, mode)
            };
            let p = new_layout.project(&layout, &prior);
            let (prog, s_log, w_log) = match relaxation {
                RelaxationMode::TrustRegion => {
                    (add_trust_regions(&base, &new_layout, &p, sigma), Some(sigma), None)
                }
                RelaxationMode::SoftConstraint => {
                    (add_soft_penalties(&base, &new_layout, &p, w), None, Some(w))
                }
            };
            dump(settings, &prog, &format!("iter_{iteration:02}_{attempt}"))?;
            let sol = backend.solve(&prog)?;
            report.solver_iterations += sol.iterations;
            report.total_solve_time += sol.solve_time;
            if sol.status.is_optimal() {
                let mut x = sol.x.clone();
                let trust = s_log.map(|s| (p.as_slice(), s));
                let moved = polish_auxiliaries(&new_layout, &mut x, trust, polish_tol);
                break Some((sol, x, moved, new_layout, s_log, w_log));
            }
            let entry = iteration_entry(iteration, phase, s_log, w_log, &sol, None, None, false);
            emit(&entry);
            log.push(entry);
            if relaxation == RelaxationMode::TrustRegion
                && sol.status == SolveStatus::PrimalInfeasible
                && attempt == 0
            {
                sigma *= settings.infeasibility_backoff;
                warn!("iteration {iteration}: trust region infeasible, widening to sigma = {sigma:.3e}");
                attempt += 1;
                continue;
            }
            break None;
        };
        let Some((sol, x, moved, new_layout, s_log, w_log)) = outcome else {
            report.note = Some(format!("iteration {iteration}: solver did not reach optimality"));
            break;
        };

        layout = new_layout;
        prior = x;
        let (traj, controls) = decode(scenario, &layout, &prior);
        let violation = violation_metrics(&scenario.initial, &traj, &controls, &scenario.plan, cfg)?;
        let mut entry = iteration_entry(
            iteration,
            phase,
            s_log,
            w_log,
            &sol,
            Some(&violation),
            aux_gap_range(&layout, &prior),
            true,
        );
        entry.aux_polish = Some(moved);
        emit(&entry);
        log.push(entry);
        last = violation;
        converged = thr.met(&violation);
        let better = best
            .as_ref()
            .is_none_or(|b| converged || thr.score(&violation) <= thr.score(&b.violation));
        if better {
            best = Some(Accepted {
                iteration,
                trajectory: traj,
                controls,
                violation,
            });
        }
        sigma = (sigma * settings.sigma_shrink).max(settings.sigma_min);
        w = (w * settings.w_growth).min(settings.w_max);
    }

    let status = if best.as_ref().is_some_and(|b| thr.met(&b.violation)) {
        RefineStatus::Converged
    } else {
        RefineStatus::NotConverged
    };
    Ok(finish(status, best, report, log))
}

#[allow(clippy::too_many_arguments)]
fn iteration_entry(
    iteration: usize,
    phase: u8,
    sigma: Option<f64>,
    w: Option<f64>,
    sol: &crate::conic::ConicSolution,
    violation: Option<&ViolationReport>,
    gaps: Option<(f64, f64)>,
    accepted: bool,
) -> IterationLog {
    IterationLog {
        iteration,
        phase,
        sigma,
        w,
        solver_status: sol.status,
        solver_iterations: sol.iterations,
        solve_time: sol.solve_time,
        objective: sol.pobj,
        com_err: violation.map(|v| v.com_err),
        lin_err: violation.map(|v| v.lin_err),
        ang_err: violation.map(|v| v.ang_err),
        aux_gap_min: gaps.map(|g| g.0),
        aux_gap_max: gaps.map(|g| g.1),
        aux_polish: None,
        accepted,
    }
}

fn dump(settings: &RefinementSettings, prog: &ConicProgram, stem: &str) -> Result<(), RelaxError> {
    if let Some(dir) = &settings.dump_dir {
        let path = dir.join(format!("{stem}.conic"));
        std::fs::write(&path, crate::conic::dump::write_program(prog))
            .map_err(|e| RelaxError::Io(path.display().to_string(), e.to_string()))?;
    }
    Ok(())
}

fn emit(entry: &IterationLog) {
    if let Ok(line) = serde_json::to_string(entry) {
        info!(target: "centroidal::refine", "{line}");
    }
}

#[cfg(test)]
mod tests;
