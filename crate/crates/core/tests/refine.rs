use std::path::PathBuf;

use centroidal::dynamics::integrate;
use centroidal::relax::IterationLog;
use centroidal::{load_scenario, refine, RefineStatus, RefinementSettings, Scenario, TimeMode};

fn stairs(mode: TimeMode) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "stairs.toml"].iter().collect();
    let mut sc = load_scenario(&std::fs::read_to_string(path).unwrap()).unwrap();
    sc.config.time_mode = mode;
    sc
}

fn first_audit(log: &[IterationLog]) -> (f64, f64, f64) {
    let it = log.iter().find(|it| it.accepted && it.com_err.is_some()).unwrap();
    (it.com_err.unwrap(), it.lin_err.unwrap(), it.ang_err.unwrap())
}

#[test]
fn free_horizon_respects_bounds_and_improves_audit() {
    let sc = stairs(TimeMode::TimeOptFreeHorizon);
    let out = refine(&sc, &RefinementSettings::for_scenario(&sc)).unwrap();
    assert_eq!(out.status, RefineStatus::Converged);
    let b = sc.config.dt_bounds;
    assert!(out.trajectory.dt.iter().all(|d| b.contains(*d)), "{:?}", out.trajectory.dt);
    let (c, l, a) = first_audit(&out.log);
    let v = out.violation;
    assert!(v.com_err <= c && v.lin_err <= l && v.ang_err <= a);
}

#[test]
fn fixed_horizon_keeps_total_duration() {
    let sc = stairs(TimeMode::TimeOptFixedHorizon);
    let out = refine(&sc, &RefinementSettings::for_scenario(&sc)).unwrap();
    assert_eq!(out.status, RefineStatus::Converged);
    let total = out.trajectory.total_duration();
    assert!((total - sc.config.nominal_horizon()).abs() <= 1e-9, "{total}");
}

#[test]
fn fixed_time_solution_matches_its_own_integration() {
    let sc = stairs(TimeMode::FixedTime);
    let st = RefinementSettings::for_scenario(&sc);
    let out = refine(&sc, &st).unwrap();
    assert_eq!(out.status, RefineStatus::Converged);
    assert!(out.trajectory.dt.iter().all(|d| *d == sc.config.nominal_dt));
    let exact = integrate(&sc.initial, &out.controls, &sc.plan, &sc.config).unwrap();
    let n = exact.len() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| (0..exact.len()).map(f).sum::<f64>() / n;
    let s = &out.trajectory.states;
    let thr = st.conv_thresholds;
    assert!(mean(&|t| (s[t].r - exact[t].r).norm()) < thr.com);
    assert!(mean(&|t| (s[t].l - exact[t].l).norm()) < thr.lin);
    assert!(mean(&|t| (s[t].k - exact[t].k).norm()) < thr.ang);
}
