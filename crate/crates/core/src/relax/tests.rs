use super::*;
use crate::conic::{self, ProgramBuilder};
use crate::dc::DcPair;
use crate::model::load_scenario;

fn scenario(n: usize, extra_costs: &str, time_mode: &str) -> Scenario {
    let text = format!(
        r#"
schema_version = 1
name = "single"

[robot]
mass = 20.0
friction_mu = 0.6
cop_bounds_x = [-0.05, 0.05]
cop_bounds_y = [-0.03, 0.03]
torque_bounds = [-5.0, 5.0]
end_effectors = [{{ id = "foot", max_length = 1.2 }}]

[time]
n_timesteps = {n}
nominal_dt = 0.1
dt_bounds = [0.05, 0.25]
time_mode = "{time_mode}"

[costs]
{extra_costs}

[[contacts]]
eef = "foot"
start = 0
end = {n}
position = [0.0, 0.0, 0.0]

[initial]
com = [0.0, 0.0, 0.8]
terminal = [0.0, 0.0, 0.8, 0, 0, 0, 0, 0, 0]
"#
    );
    load_scenario(&text).unwrap()
}

#[test]
fn single_step_fixed_time_layout() {
    let s = scenario(1, "", "fixed_time");
    let (prog, layout) = build_convex_relaxation(&s, TimeMode::FixedTime);
    assert_eq!(prog.a.nrows, 15);
    assert_eq!(layout.dynamics_rows, 15);
    assert!(!layout.has_dt);
    assert!(layout.get(&VarKey::Dt { t: 0 }).is_none());
    // 15 states and rates, f/τ/z, 3 cross-product pairs, running and terminal cost.
    assert_eq!(layout.n_vars(), 15 + 6 + 6 + 2);
    assert_eq!(prog.n_vars(), layout.n_vars());
    assert!(layout.is_bijective());
    assert_eq!(conic::kkt_stats(&prog).lin_eq, 15);
}

#[test]
fn time_modes_add_timesteps_and_auxiliaries() {
    let n = 6;
    let fixed = build_convex_relaxation(&scenario(n, "", "fixed_time"), TimeMode::FixedTime);
    let free = build_convex_relaxation(&scenario(n, "", "time_opt_free_horizon"), TimeMode::TimeOptFreeHorizon);
    let horizon = build_convex_relaxation(
        &scenario(n, "", "time_opt_fixed_horizon"),
        TimeMode::TimeOptFixedHorizon,
    );
    assert_eq!(free.1.n_vars() - fixed.1.n_vars(), n + 2 * 3 * 3 * n);
    assert_eq!(free.1.time_pair_count(), 9 * n);
    assert_eq!(free.0.a.nrows, fixed.0.a.nrows);
    assert_eq!(horizon.0.a.nrows, fixed.0.a.nrows + 1);
    assert!(free.1.is_bijective() && horizon.1.is_bijective());
}

#[test]
fn fixed_horizon_sums_to_nominal() {
    let s = scenario(5, "terminal_state = [0, 0, 0, 0, 0, 0, 0, 0, 0]\ndt_reg = 0.0", "time_opt_fixed_horizon");
    let (prog, layout) = build_convex_relaxation(&s, TimeMode::TimeOptFixedHorizon);
    let sol = conic::solve(&tie_break(&prog, &layout, 1e-4), 1e-9, 100).unwrap();
    assert!(sol.status.is_optimal(), "{}", sol.status);
    let total: f64 = (0..5).map(|t| sol.x[layout.idx(VarKey::Dt { t })]).sum();
    assert!((total - 0.5).abs() < 1e-9, "{total}");
}

#[test]
fn dt_regularizer_alone_selects_nominal_step() {
    let costs = "terminal_state = [0, 0, 0, 0, 0, 0, 0, 0, 0]\n\
                 running_momentum_tracking = [0, 0, 0, 0, 0, 0, 0, 0, 0]\n\
                 force_reg = 0.0\ntorque_reg = 0.0\ncop_reg = 0.0\ndt_reg = 1.0";
    let s = scenario(4, costs, "time_opt_free_horizon");
    let (prog, layout) = build_convex_relaxation(&s, TimeMode::TimeOptFreeHorizon);
    let sol = conic::solve(&tie_break(&prog, &layout, 0.0), 1e-9, 100).unwrap();
    assert!(sol.status.is_optimal());
    for t in 0..4 {
        let dt = sol.x[layout.idx(VarKey::Dt { t })];
        assert!((dt - 0.1).abs() < 1e-4, "step {t}: {dt}");
    }
}

#[test]
fn zero_weights_leave_a_feasible_relaxation() {
    let costs = "terminal_state = [0, 0, 0, 0, 0, 0, 0, 0, 0]\n\
                 running_momentum_tracking = [0, 0, 0, 0, 0, 0, 0, 0, 0]\n\
                 force_reg = 0.0\ntorque_reg = 0.0\ncop_reg = 0.0";
    let s = scenario(3, costs, "fixed_time");
    let (prog, layout) = build_convex_relaxation(&s, TimeMode::FixedTime);
    let sol = conic::solve(&tie_break(&prog, &layout, 1e-4), 1e-8, 100).unwrap();
    assert!(sol.status.is_optimal());
    let (lo, _) = aux_gap_range(&layout, &sol.x).unwrap();
    assert!(lo >= -1e-7);
}

fn one_pair_layout(pbar: usize, qbar: usize, p: usize) -> RelaxedProblemLayout {
    let mut layout = RelaxedProblemLayout::new(1, vec![vec![]], false);
    layout.pairs.push((
        PairKey::Cross { t: 0, eef: 0, axis: 0 },
        DcPair {
            plus: vec![LinExpr::var(p)],
            minus: vec![LinExpr::constant(0.0)],
            pbar,
            qbar,
        },
    ));
    layout
}

#[test]
fn trust_region_rows_match_the_tangent() {
    // p = (x0, x1), p̄ = x2
    let mut layout = RelaxedProblemLayout::new(1, vec![vec![]], false);
    layout.pairs.push((
        PairKey::Cross { t: 0, eef: 0, axis: 0 },
        DcPair {
            plus: vec![LinExpr::var(0), LinExpr::var(1)],
            minus: vec![LinExpr::var(0)],
            pbar: 2,
            qbar: 3,
        },
    ));
    let mut b = ProgramBuilder::new();
    for i in 0..4 {
        b.add_variable(format!("x{i}"));
    }
    let base = b.finish();
    let prog = add_trust_regions(&base, &layout, &[1.0, 0.0, 0.0, 0.0], 0.1);
    // h - G x ≥ 0 with row 0: 2 x0 - x2 - 1 + 0.1
    assert_eq!(prog.cones.nonneg, 2);
    let row0: Vec<(usize, f64)> = prog.g.triplets().filter(|t| t.0 == 0).map(|t| (t.1, -t.2)).collect();
    assert_eq!(row0, vec![(0, 2.0), (2, -1.0)]);
    assert!((prog.h[0] - (-0.9)).abs() < 1e-15);

    let prog = add_trust_regions(&base, &layout, &[0.0, 0.0, 0.0, 0.0], 0.1);
    let row0: Vec<(usize, f64)> = prog.g.triplets().filter(|t| t.0 == 0).map(|t| (t.1, -t.2)).collect();
    assert_eq!(row0, vec![(2, -1.0)]);
    assert!((prog.h[0] - 0.1).abs() < 1e-15);
}

#[test]
fn soft_penalty_vanishes_at_an_exact_prior() {
    let layout = one_pair_layout(1, 2, 0);
    let mut b = ProgramBuilder::new();
    for i in 0..3 {
        b.add_variable(format!("x{i}"));
    }
    let base = b.finish();
    assert_eq!(add_soft_penalties(&base, &layout, &[0.3, 0.09, 0.0], 0.0), base);
    let prog = add_soft_penalties(&base, &layout, &[0.3, 0.09, 0.0], 10.0);
    // Fix x to the prior and the penalty epigraph can be zero.
    let mut b = prog.to_builder();
    for (i, v) in [0.3, 0.09, 0.0].into_iter().enumerate() {
        b.add_eq(LinExpr::var(i) + (-v));
    }
    let sol = conic::solve(&b.finish(), 1e-10, 100).unwrap();
    assert!(sol.status.is_optimal());
    assert!(sol.pobj.abs() < 1e-8, "{}", sol.pobj);
}

/// `min (p̄ − 5)² + (p − 1)²` with `p̄ = p²` relaxed to `p̄ ≥ p²`. The minus
/// side is the constant zero, so `q̄ ≥ 0` only needs a small pull downwards.
fn toy_program() -> (ConicProgram, RelaxedProblemLayout) {
    let mut b = ProgramBuilder::new();
    let p = b.add_variable("p");
    let pbar = b.add_variable("pbar");
    let qbar = b.add_variable("qbar");
    let t = b.add_variable("t");
    b.add_square_epigraph(LinExpr::var(pbar), vec![LinExpr::var(p)]);
    b.add_square_epigraph(LinExpr::var(qbar), vec![LinExpr::constant(0.0)]);
    b.add_objective(&(LinExpr::var(t) + LinExpr::var(qbar) * 1e-3));
    b.add_square_epigraph(
        LinExpr::var(t),
        vec![LinExpr::var(pbar) + (-5.0), LinExpr::var(p) + (-1.0)],
    );
    (b.finish(), one_pair_layout(pbar, qbar, p))
}

fn toy_oracle() -> f64 {
    let f = |p: f64| (p * p - 5.0).powi(2) + (p - 1.0).powi(2);
    let mut best = (f64::INFINITY, 0.0);
    let mut p = -4.0;
    while p <= 4.0 {
        if f(p) < best.0 {
            best = (f(p), p);
        }
        p += 1e-5;
    }
    best.1
}

fn toy_refine(mode: RelaxationMode) -> f64 {
    let (prog, layout) = toy_program();
    let s = RefinementSettings::default();
    let sol0 = conic::solve(&prog, 1e-9, 100).unwrap();
    let mut x = sol0.x;
    assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 5.0).abs() < 1e-4 && x[2].abs() < 1e-6);
    let (mut sigma, mut w) = (s.sigma0, s.w0);
    for _ in 0..40 {
        let next = match mode {
            RelaxationMode::TrustRegion => add_trust_regions(&prog, &layout, &x, sigma),
            RelaxationMode::SoftConstraint => add_soft_penalties(&prog, &layout, &x, w),
        };
        let sol = conic::solve(&next, 1e-9, 100).unwrap();
        assert!(sol.status.is_optimal(), "{}", sol.status);
        if mode == RelaxationMode::TrustRegion {
            let gap = sol.x[1] - sol.x[0] * sol.x[0];
            assert!(gap >= -1e-8 && gap <= sigma + 1e-7, "gap {gap} sigma {sigma}");
        }
        x = sol.x;
        sigma = (sigma * s.sigma_shrink).max(s.sigma_min);
        w = (w * s.w_growth).min(s.w_max);
    }
    x[0]
}

#[test]
fn toy_problem_trust_region_reaches_scan_optimum() {
    let oracle = toy_oracle();
    let p = toy_refine(RelaxationMode::TrustRegion);
    assert!((p - oracle).abs() < 1e-3, "{p} vs {oracle}");
}

#[test]
fn toy_problem_soft_penalty_reaches_scan_optimum() {
    let oracle = toy_oracle();
    let p = toy_refine(RelaxationMode::SoftConstraint);
    assert!((p - oracle).abs() < 1e-3, "{p} vs {oracle}");
}

#[test]
fn settings_are_validated() {
    let mut s = RefinementSettings::default();
    assert!(s.validate().is_ok());
    s.sigma_shrink = 1.0;
    assert!(s.validate().is_err());
    let s = RefinementSettings { w_growth: 0.5, ..Default::default() };
    assert!(s.validate().is_err());
}

#[test]
fn static_balance_converges_quickly() {
    let s = scenario(10, "", "fixed_time");
    let out = refine(&s, &RefinementSettings::default()).unwrap();
    assert_eq!(out.status, RefineStatus::Converged, "{:?}", out.log);
    assert!(out.report.outer_iterations <= 3);
    assert!(out.violation.ang_err < 1e-2);
    assert_eq!(out.controls.len(), 10);
}

#[test]
fn trust_region_iterates_stay_contained() {
    let s = scenario(8, "", "fixed_time");
    let settings = RefinementSettings { max_outer: 6, conv_thresholds: Thresholds { com: 1e-12, lin: 1e-12, ang: 1e-12 }, ..Default::default() };
    let out = refine(&s, &settings).unwrap();
    for entry in out.log.iter().filter(|e| e.accepted && e.sigma.is_some()) {
        let sigma = entry.sigma.unwrap();
        assert!(entry.aux_gap_min.unwrap() >= -1e-7, "{entry:?}");
        assert!(entry.aux_gap_max.unwrap() <= sigma + 1e-7, "{entry:?}");
    }
}
