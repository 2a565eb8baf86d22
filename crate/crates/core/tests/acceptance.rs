//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero when any of them fails.
//!
//! Runs with `cargo test -p centroidal --test acceptance`.

use std::path::PathBuf;
use std::time::Instant;

use centroidal::conic::{self, ConicProgram, LinExpr, ProgramBuilder};
use centroidal::dc;
use centroidal::relax::IterationLog;
use centroidal::{
    load_scenario, refine, RefineOutcome, RefineStatus, RefinementSettings, RelaxationMode,
    Scenario, SolveStatus, TimeMode,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("dc_exactness", dc_exactness),
        ("conic_solver", conic_solver),
        ("stairs_convergence", stairs_convergence),
        ("relaxation_agreement", relaxation_agreement),
        ("time_optimization_necessity", time_necessity),
        ("trust_region_containment", trust_containment),
        ("problem_size_and_timing", size_and_timing),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    load_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(mut sc: Scenario, time: TimeMode, relax: RelaxationMode, st: &RefinementSettings) -> RefineOutcome {
    sc.config.time_mode = time;
    sc.config.relaxation_mode = relax;
    refine(&sc, st).expect("refinement runs")
}

/// The scenario's wide initial trust regions plus slower shrinking, so the
/// timestep durations can travel far from their first estimates.
fn low_friction_settings() -> RefinementSettings {
    RefinementSettings {
        sigma_shrink: 0.7,
        max_outer: 40,
        ..RefinementSettings::for_scenario(&scenario("low_friction.toml"))
    }
}

fn check(ok: bool, msg: String) -> Verdict {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dc_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let vars = |base: usize| [0, 1, 2].map(|a| LinExpr::var(base + a));
    for _ in 0..5_000 {
        // x = (ℓ, f, six auxiliaries). Lever arms within a leg length,
        // mass-normalized forces up to a few g, balanced by the scale.
        let mut x = vec![0.0; 12];
        for v in &mut x[..3] {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in &mut x[3..6] {
            *v = rng.gen_range(-30.0..30.0);
        }
        let scale = (9.81f64 / rng.gen_range(0.5..1.5)).sqrt();
        let mut next = 6;
        let mut alloc = |_: String| {
            next += 1;
            next - 1
        };
        let pairs = dc::decompose_cross_product(&vars(0), &vars(3), scale, "c", &mut alloc);
        dc::tighten(&pairs, &mut x);
        let ell = Vector3::new(x[0], x[1], x[2]);
        let f = Vector3::new(x[3], x[4], x[5]);
        let direct = ell.cross(&f);
        let got = dc::reconstruct(&pairs, &x);
        let mag = ell.norm() * f.norm();
        for a in 0..3 {
            worst = worst.max((got[a] - direct[a]).abs() / mag.max(f64::MIN_POSITIVE));
        }
    }
    for _ in 0..5_000 {
        // x = (v, Δ, six auxiliaries)
        let mut x = vec![0.0; 10];
        for v in &mut x[..3] {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            *v = sign * rng.gen_range(0.1..10.0);
        }
        x[3] = rng.gen_range(0.05..0.25);
        let scale = (rng.gen_range(0.05..0.25) / rng.gen_range(0.5..2.0f64)).sqrt();
        let mut next = 4;
        let mut alloc = |_: String| {
            next += 1;
            next - 1
        };
        let pairs = dc::decompose_time_bilinear(&vars(0), &LinExpr::var(3), scale, "t", &mut alloc);
        dc::tighten(&pairs, &mut x);
        let got = dc::reconstruct(&pairs, &x);
        for a in 0..3 {
            let direct = x[a] * x[3];
            worst = worst.max((got[a] - direct).abs() / direct.abs().max(f64::MIN_POSITIVE));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-12 && secs < 1.0,
        format!("10000 decompositions, worst relative error {worst:.2e}, {secs:.3} s"),
    )
}

/// Minimizes `½xᵀQx + cᵀx` subject to `Ax ≤ b` by trying every active set.
fn active_set_qp(q: &DMatrix<f64>, c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let (n, m) = (q.nrows(), a.nrows());
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(q);
        rhs.rows_mut(0, n).copy_from(&(-c));
        for (j, &i) in act.iter().enumerate() {
            for col in 0..n {
                kkt[(n + j, col)] = a[(i, col)];
                kkt[(col, n + j)] = a[(i, col)];
            }
            rhs[n + j] = b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let feasible = (a * &x - b).iter().all(|r| *r <= 1e-9);
        // Multipliers of Ax ≤ b enter the stationarity row with a plus sign.
        let dual_ok = sol.rows(n, k).iter().all(|l| *l >= -1e-9);
        if feasible && dual_ok {
            best = best.min(0.5 * x.dot(&(q * &x)) + c.dot(&x));
        }
    }
    best
}

fn random_qp(rng: &mut ChaCha8Rng) -> (ConicProgram, f64) {
    let (n, m) = (10, 6);
    let mat = |rng: &mut ChaCha8Rng, r, c| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    // Q = RᵀR + I, so ½xᵀQx = ½‖(Rx, x)‖².
    let mut half = DMatrix::zeros(2 * n, n);
    half.rows_mut(0, n).copy_from(&mat(rng, n, n));
    half.rows_mut(n, n).fill_with_identity();
    let q = half.transpose() * &half;
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let a = mat(rng, m, n);
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b = &a * &x0 + DVector::from_fn(m, |_, _| rng.gen_range(0.1..1.0));
    let oracle = active_set_qp(&q, &c, &a, &b);

    // Epigraph t ≥ ‖Hx‖² with H = (R; I).
    let mut pb = ProgramBuilder::new();
    let xs: Vec<usize> = (0..n).map(|i| pb.add_variable(format!("x{i}"))).collect();
    let t = pb.add_variable("t");
    let row = |m: &DMatrix<f64>, i: usize| {
        let mut e = LinExpr::default();
        for (j, &v) in xs.iter().enumerate() {
            e.add_term(v, m[(i, j)]);
        }
        e
    };
    let mut obj = LinExpr::term(t, 0.5);
    for (j, &v) in xs.iter().enumerate() {
        obj.add_term(v, c[j]);
    }
    pb.add_objective(&obj);
    pb.add_square_epigraph(LinExpr::var(t), (0..2 * n).map(|i| row(&half, i)).collect());
    for i in 0..m {
        pb.add_nonneg(-row(&a, i) + b[i]);
    }
    (pb.finish(), oracle)
}

/// `min cᵀx` over the ball `‖x − x0‖ ≤ ρ` cut by `aᵀx ≤ β`, in closed form.
fn ball_halfspace(c: &DVector<f64>, x0: &DVector<f64>, rho: f64, a: &DVector<f64>, beta: f64) -> f64 {
    let free = x0 - c * (rho / c.norm());
    if a.dot(&free) <= beta {
        return c.dot(&free);
    }
    let an = a.norm();
    let d = (a.dot(x0) - beta) / an;
    let center = x0 - a * (d / an);
    let radius = (rho * rho - d * d).sqrt();
    let tangent = c - a * (a.dot(c) / (an * an));
    c.dot(&center) - radius * tangent.norm()
}

fn ball_program(
    c: &DVector<f64>,
    x0: &DVector<f64>,
    rho: f64,
    a: &DVector<f64>,
    beta: f64,
) -> ConicProgram {
    let n = c.len();
    let mut pb = ProgramBuilder::new();
    let xs: Vec<usize> = (0..n).map(|i| pb.add_variable(format!("x{i}"))).collect();
    let mut obj = LinExpr::default();
    let mut cut = LinExpr::constant(beta);
    for (i, &v) in xs.iter().enumerate() {
        obj.add_term(v, c[i]);
        cut.add_term(v, -a[i]);
    }
    pb.add_objective(&obj);
    let mut cone = vec![LinExpr::constant(rho)];
    cone.extend(xs.iter().enumerate().map(|(i, &v)| LinExpr::var(v) + (-x0[i])));
    pb.add_soc(cone);
    pb.add_nonneg(cut);
    pb.finish()
}

fn random_ball(rng: &mut ChaCha8Rng, infeasible: bool) -> (ConicProgram, f64) {
    let n = rng.gen_range(2..8);
    let v = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let (c, x0, a) = (v(rng), v(rng), v(rng));
    let rho = rng.gen_range(0.5..3.0);
    let offset = if infeasible {
        -rho * rng.gen_range(1.2..3.0)
    } else {
        rho * rng.gen_range(-0.8..0.8)
    };
    let beta = a.dot(&x0) + offset * a.norm();
    (ball_program(&c, &x0, rho, &a, beta), ball_halfspace(&c, &x0, rho, &a, beta))
}

/// `x ∈ [0, 1]ⁿ` with `Σx` fixed above `n`.
fn infeasible_box(rng: &mut ChaCha8Rng) -> ConicProgram {
    let n = rng.gen_range(2..6);
    let mut pb = ProgramBuilder::new();
    let xs: Vec<usize> = (0..n).map(|i| pb.add_variable(format!("x{i}"))).collect();
    let mut sum = LinExpr::constant(-(n as f64) - rng.gen_range(0.5..2.0));
    for &v in &xs {
        pb.add_objective(&LinExpr::term(v, rng.gen_range(-1.0..1.0)));
        pb.add_nonneg(LinExpr::var(v));
        pb.add_nonneg(-LinExpr::var(v) + 1.0);
        sum.add_term(v, 1.0);
    }
    pb.add_eq(sum);
    pb.finish()
}

/// Checks `Aᵀy + Gᵀz = 0`, `z ∈ K` and `bᵀy + hᵀz < 0`.
fn certificate_error(prog: &ConicProgram, y: &[f64], z: &[f64]) -> Option<String> {
    let mut r = vec![0.0; prog.n_vars()];
    prog.a.gemv_t(1.0, y, &mut r);
    prog.g.gemv_t(1.0, z, &mut r);
    let scale = 1.0 + y.iter().chain(z).map(|v| v.abs()).fold(0.0, f64::max);
    let res = r.iter().map(|v| v.abs()).fold(0.0, f64::max) / scale;
    if res > 1e-7 {
        return Some(format!("‖Aᵀy + Gᵀz‖ = {res:.1e}"));
    }
    if z[..prog.cones.nonneg].iter().any(|v| *v < -1e-9 * scale) {
        return Some("negative orthant multiplier".into());
    }
    for (off, d) in prog.cones.soc_ranges() {
        let tail = z[off + 1..off + d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if tail > z[off] + 1e-9 * scale {
            return Some("multiplier outside its cone".into());
        }
    }
    let by: f64 = prog.b.iter().zip(y).map(|(a, b)| a * b).sum();
    let hz: f64 = prog.h.iter().zip(z).map(|(a, b)| a * b).sum();
    (by + hz >= 0.0).then(|| format!("bᵀy + hᵀz = {:.1e}", by + hz))
}

fn conic_solver() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (prog, oracle) = if i % 2 == 0 { random_qp(&mut rng) } else { random_ball(&mut rng, false) };
        let sol = conic::solve(&prog, 1e-9, 100).map_err(|e| format!("instance {i}: {e}"))?;
        if !sol.status.is_optimal() {
            return Err(format!("instance {i}: status {}", sol.status));
        }
        let err = (sol.pobj - oracle).abs() / oracle.abs().max(1.0);
        worst = worst.max(err);
    }
    for i in 0..20 {
        let prog = if i % 2 == 0 { random_ball(&mut rng, true).0 } else { infeasible_box(&mut rng) };
        let sol = conic::solve(&prog, 1e-9, 100).map_err(|e| format!("infeasible {i}: {e}"))?;
        if sol.status != SolveStatus::PrimalInfeasible {
            return Err(format!("infeasible {i}: status {}", sol.status));
        }
        if let Some(why) = certificate_error(&prog, &sol.y, &sol.z) {
            return Err(format!("infeasible {i}: {why}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 30.0,
        format!("100 objectives within {worst:.1e} of the oracles, 20 certificates valid, {secs:.2} s"),
    )
}

fn stairs_convergence() -> Verdict {
    let start = Instant::now();
    let out = run(scenario("stairs.toml"), TimeMode::FixedTime, RelaxationMode::TrustRegion, &RefinementSettings::default());
    let secs = start.elapsed().as_secs_f64();
    let v = &out.violation;
    check(
        out.status == RefineStatus::Converged
            && v.com_err < 1e-6
            && v.lin_err < 1e-5
            && v.ang_err < 0.02
            && secs < 60.0,
        format!(
            "{} after {} outer iterations, com {:.2e} lin {:.2e} ang {:.2e}, {secs:.1} s",
            out.status, out.report.outer_iterations, v.com_err, v.lin_err, v.ang_err
        ),
    )
}

fn relaxation_agreement() -> Verdict {
    let sc = scenario("hands_under_bar.toml");
    let st = RefinementSettings::default();
    let trust = run(sc.clone(), TimeMode::FixedTime, RelaxationMode::TrustRegion, &st);
    let soft = run(sc.clone(), TimeMode::FixedTime, RelaxationMode::SoftConstraint, &st);
    for out in [&trust, &soft] {
        if out.status != RefineStatus::Converged {
            return Err(format!("{:?} run ended {}", out.report.relaxation_mode, out.status));
        }
    }
    let m = sc.config.mass;
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, b) in trust.trajectory.states.iter().zip(&soft.trajectory.states) {
        diff += ((a.l - b.l) / m).norm_squared() + ((a.k - b.k) / m).norm_squared();
        norm += (a.l / m).norm_squared() + (a.k / m).norm_squared();
    }
    let rel = (diff / norm).sqrt();
    check(rel <= 0.05, format!("RMS difference of normalized momenta {:.2}% of the trust-region RMS", 100.0 * rel))
}

fn time_necessity() -> Verdict {
    let sc = scenario("low_friction.toml");
    let st = low_friction_settings();
    let fixed = run(sc.clone(), TimeMode::FixedTime, RelaxationMode::TrustRegion, &st);
    let fixed_fails = fixed.status != RefineStatus::Converged;
    let free = run(sc.clone(), TimeMode::TimeOptFreeHorizon, RelaxationMode::TrustRegion, &st);
    let total: f64 = free.trajectory.dt.iter().sum();
    let hi = sc.config.dt_bounds.max;
    let at_max = free.trajectory.dt.iter().filter(|d| (**d - hi).abs() <= 1e-6).count();
    check(
        fixed_fails
            && free.status == RefineStatus::Converged
            && total > sc.config.nominal_horizon()
            && at_max > 0,
        format!(
            "fixed time {}, free horizon {} with total {total:.3} s against {:.3} s nominal, {at_max} steps at {hi} s",
            fixed.status,
            free.status,
            sc.config.nominal_horizon()
        ),
    )
}

fn containment(log: &[IterationLog]) -> Result<usize, String> {
    let mut checked = 0;
    for it in log.iter().filter(|it| it.accepted) {
        let (Some(lo), Some(hi)) = (it.aux_gap_min, it.aux_gap_max) else { continue };
        if lo < 0.0 {
            return Err(format!("iteration {}: gap {lo:.2e} below zero", it.iteration));
        }
        if let Some(sigma) = it.sigma {
            if hi > sigma + 1e-7 {
                return Err(format!("iteration {}: gap {hi:.2e} above σ = {sigma:.2e}", it.iteration));
            }
        }
        checked += 1;
    }
    Ok(checked)
}

fn trust_containment() -> Verdict {
    let runs = [
        ("stairs.toml", TimeMode::FixedTime, RefinementSettings::default()),
        ("stairs.toml", TimeMode::TimeOptFreeHorizon, RefinementSettings::default()),
        ("stairs.toml", TimeMode::TimeOptFixedHorizon, RefinementSettings::default()),
        ("hands_under_bar.toml", TimeMode::FixedTime, RefinementSettings::default()),
        ("low_friction.toml", TimeMode::TimeOptFreeHorizon, low_friction_settings()),
    ];
    let mut total = 0;
    for (name, mode, st) in runs {
        let out = run(scenario(name), mode, RelaxationMode::TrustRegion, &st);
        total += containment(&out.log).map_err(|e| format!("{name} {mode:?}: {e}"))?;
    }
    check(total > 0, format!("{total} accepted iterates over 5 runs within [0, σ + 1e-7]"))
}

fn size_and_timing() -> Verdict {
    let sc = scenario("stairs.toml");
    let st = RefinementSettings::default();
    let fixed = run(sc.clone(), TimeMode::FixedTime, RelaxationMode::TrustRegion, &st);
    let free = run(sc.clone(), TimeMode::TimeOptFreeHorizon, RelaxationMode::TrustRegion, &st);
    let n = sc.config.n_timesteps;
    // Per step: one duration and two auxiliaries for each of the nine
    // velocity-duration products (l Δ, l̇ Δ, k̇ Δ).
    let expected_vars = n * (1 + 2 * 9);
    let (a, b) = (&fixed.report.kkt_stats, &free.report.kkt_stats);
    let dvars = b.variables - a.variables;
    let deq = b.lin_eq as i64 - a.lin_eq as i64;
    let (ta, tb) = (fixed.report.total_solve_time, free.report.total_solve_time);
    check(
        dvars == expected_vars && deq == 0 && tb > ta,
        format!(
            "variables {} -> {} (+{dvars}, expected +{expected_vars}), equality rows {} -> {}, solve time {ta:.2} s -> {tb:.2} s",
            a.variables, b.variables, a.lin_eq, b.lin_eq
        ),
    )
}
