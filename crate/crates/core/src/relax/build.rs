//! Assembly of the relaxed second-order cone program.

use nalgebra::{Matrix3, Vector3};

use crate::conic::{ConicProgram, LinExpr, ProgramBuilder};
use crate::dc::{decompose_cross_product, decompose_time_bilinear, DcPair};
use crate::dynamics::{CentroidalState, CentroidalTrajectory, ContactControl, ControlStep};
use crate::model::{Scenario, TimeMode};

use super::layout::{Epigraph, PairKey, RelaxedProblemLayout, Side, TimeProduct, VarKey};

/// How the products of the timestep with states and rates enter the dynamics.
#[derive(Debug, Clone, Copy)]
pub enum TimeTreatment<'a> {
    /// Timesteps are the nominal constant; the products are linear.
    Nominal,
    /// Timesteps are variables; products are split into DC pairs.
    Split,
    /// Timesteps are variables; products are linearized at a previous
    /// solution and each timestep is boxed to `±radius` around it.
    Linearized {
        layout: &'a RelaxedProblemLayout,
        x: &'a [f64],
        radius: f64,
    },
}

fn var(i: usize) -> LinExpr {
    LinExpr::var(i)
}

fn vec_expr(idx: [usize; 3]) -> [LinExpr; 3] {
    idx.map(var)
}

fn const_expr(v: &Vector3<f64>) -> [LinExpr; 3] {
    [0, 1, 2].map(|a| LinExpr::constant(v[a]))
}

/// Balancing factor for the product of a quantity of typical size `typ`
/// with a timestep of typical size `dt`.
fn time_scale(dt: f64, typ: f64) -> f64 {
    if dt > 0.0 && typ > 0.0 {
        (dt / typ).sqrt()
    } else {
        1.0
    }
}

struct Assembler {
    b: ProgramBuilder,
    layout: RelaxedProblemLayout,
}

impl Assembler {
    fn var(&mut self, key: VarKey) -> usize {
        let i = self.layout.push(key);
        let j = self.b.add_variable(key.to_string());
        debug_assert_eq!(i, j);
        i
    }

    fn vec3(&mut self, key: impl Fn(usize) -> VarKey) -> [usize; 3] {
        [0, 1, 2].map(|a| self.var(key(a)))
    }

    /// Allocates the auxiliaries of `keys.len()` pairs in order and records them.
    fn split(
        &mut self,
        keys: [PairKey; 3],
        make: impl FnOnce(&mut dyn FnMut(String) -> usize) -> [DcPair; 3],
    ) -> [LinExpr; 3] {
        let mut k = 0;
        let pairs = {
            let mut alloc = |_name: String| {
                let side = if k % 2 == 0 { Side::Plus } else { Side::Minus };
                let key = VarKey::Aux { pair: keys[k / 2], side };
                k += 1;
                self.var(key)
            };
            make(&mut alloc)
        };
        let mut out = [LinExpr::default(), LinExpr::default(), LinExpr::default()];
        for (a, (key, pair)) in keys.into_iter().zip(pairs).enumerate() {
            self.b
                .add_square_epigraph(var(pair.pbar), pair.plus.clone());
            self.b
                .add_square_epigraph(var(pair.qbar), pair.minus.clone());
            out[a] = pair.product_expr();
            self.layout.pairs.push((key, pair));
        }
        out
    }
}

/// The convex relaxation: every bilinear term is replaced by `¼(p̄ − q̄)` with
/// `p̄ ≥ ‖p‖²`, `q̄ ≥ ‖q‖²`.
pub fn build_convex_relaxation(
    scenario: &Scenario,
    mode: TimeMode,
) -> (ConicProgram, RelaxedProblemLayout) {
    let time = if mode.optimizes_time() {
        TimeTreatment::Split
    } else {
        TimeTreatment::Nominal
    };
    build_program(scenario, mode, time)
}

pub fn build_program(
    scenario: &Scenario,
    mode: TimeMode,
    time: TimeTreatment<'_>,
) -> (ConicProgram, RelaxedProblemLayout) {
    let cfg = &scenario.config;
    let plan = &scenario.plan;
    let init = &scenario.initial;
    let n = cfg.n_timesteps;
    let m = cfg.mass;
    let g = cfg.gravity;
    let g_norm = g.norm();
    let dt_nom = cfg.nominal_dt;
    let w = &cfg.cost_weights;
    let has_dt = !matches!(time, TimeTreatment::Nominal);

    let active: Vec<Vec<usize>> = (0..n)
        .map(|t| {
            plan.active_phases(t)
                .iter()
                .map(|p| plan.eef_index(&p.eef_id).expect("validated plan"))
                .collect()
        })
        .collect();
    let mut asm = Assembler {
        b: ProgramBuilder::new(),
        layout: RelaxedProblemLayout::new(n, active.clone(), has_dt),
    };

    let time_scales = [
        (TimeProduct::LinRate, time_scale(dt_nom, g_norm)),
        (TimeProduct::Lin, time_scale(dt_nom, 1.0)),
        (TimeProduct::AngRate, time_scale(dt_nom, g_norm)),
    ];

    let mut prev_r = const_expr(&init.com);
    let mut prev_l = const_expr(&(init.lin_momentum / m));
    let mut prev_k = const_expr(&(init.ang_momentum / m));
    let mut dt_vars = Vec::new();

    for t in 0..n {
        let r = asm.vec3(|axis| VarKey::Com { t, axis });
        let l = asm.vec3(|axis| VarKey::Lin { t, axis });
        let k = asm.vec3(|axis| VarKey::Ang { t, axis });
        let ldot = asm.vec3(|axis| VarKey::LinRate { t, axis });
        let kdot = asm.vec3(|axis| VarKey::AngRate { t, axis });
        let phases = plan.active_phases(t);
        let mut contacts = Vec::with_capacity(phases.len());
        for (&eef, phase) in active[t].iter().zip(&phases) {
            let f = asm.vec3(|axis| VarKey::Force { t, eef, axis });
            let tau = asm.var(VarKey::Torque { t, eef });
            let z = [0, 1].map(|axis| asm.var(VarKey::Cop { t, eef, axis }));
            contacts.push((eef, *phase, f, tau, z));
        }
        let dt = has_dt.then(|| asm.var(VarKey::Dt { t }));
        if let Some(d) = dt {
            dt_vars.push(d);
        }

        // Linear momentum rate: l̂̇ = g + Σ f̂.
        for a in 0..3 {
            let mut e = var(ldot[a]) + (-g[a]);
            for (_, _, f, _, _) in &contacts {
                e.add_term(f[a], -1.0);
            }
            asm.b.add_eq(e);
        }

        // Angular momentum rate: k̂̇ = Σ (ℓ × f̂ + R[:, 2] τ̂).
        let mut kdot_rhs: [LinExpr; 3] = Default::default();
        for &(eef, phase, f, tau, z) in &contacts {
            let rot: Matrix3<f64> = phase.rotation();
            let ell: [LinExpr; 3] = [0, 1, 2].map(|a| {
                LinExpr::constant(phase.position[a])
                    + LinExpr::term(z[0], rot[(a, 0)])
                    + LinExpr::term(z[1], rot[(a, 1)])
                    - var(r[a])
            });
            let reach = cfg
                .end_effector(&phase.eef_id)
                .map_or(1.0, |e| e.reach())
                .max(1e-3);
            let scale = if g_norm > 0.0 { (g_norm / reach).sqrt() } else { 1.0 };
            let keys = [0, 1, 2].map(|axis| PairKey::Cross { t, eef, axis });
            let cross = asm.split(keys, |alloc| {
                decompose_cross_product(&ell, &vec_expr(f), scale, "", alloc)
            });
            for a in 0..3 {
                kdot_rhs[a] += cross[a].clone() + LinExpr::term(tau, rot[(a, 2)]);
            }
        }
        for a in 0..3 {
            asm.b.add_eq(var(kdot[a]) - kdot_rhs[a].clone());
        }

        // State updates with the three timestep products.
        let updates = [
            (TimeProduct::LinRate, ldot, l, prev_l.clone()),
            (TimeProduct::Lin, l, r, prev_r.clone()),
            (TimeProduct::AngRate, kdot, k, prev_k.clone()),
        ];
        for (product, v, state, prev) in updates {
            let prod: [LinExpr; 3] = match time {
                TimeTreatment::Nominal => v.map(|i| LinExpr::term(i, dt_nom)),
                TimeTreatment::Split => {
                    let s = time_scales.iter().find(|(p, _)| *p == product).unwrap().1;
                    let keys = [0, 1, 2].map(|axis| PairKey::Time { t, product, axis });
                    let d = var(dt.unwrap());
                    asm.split(keys, |alloc| {
                        decompose_time_bilinear(&vec_expr(v), &d, s, "", alloc)
                    })
                }
                TimeTreatment::Linearized { layout, x, .. } => {
                    let d = dt.unwrap();
                    let dbar = x[layout.idx(VarKey::Dt { t })];
                    let key = asm.layout.keys[v[0]];
                    [0, 1, 2].map(|a| {
                        let vkey = with_axis(key, a);
                        let vbar = x[layout.idx(vkey)];
                        LinExpr::term(d, vbar) + LinExpr::term(v[a], dbar) + (-vbar * dbar)
                    })
                }
            };
            for a in 0..3 {
                asm.b
                    .add_eq(var(state[a]) - prev[a].clone() - prod[a].clone());
            }
        }
        prev_r = vec_expr(r);
        prev_l = vec_expr(l);
        prev_k = vec_expr(k);

        // Contact constraints.
        for &(_, phase, f, tau, z) in &contacts {
            let rot = phase.rotation();
            for (axis, bounds) in cfg.cop_bounds.iter().enumerate() {
                asm.b.add_nonneg(var(z[axis]) + (-bounds.min));
                asm.b.add_nonneg(-var(z[axis]) + bounds.max);
            }
            asm.b.add_nonneg(var(tau) + (-cfg.torque_bounds.min / m));
            asm.b.add_nonneg(-var(tau) + cfg.torque_bounds.max / m);
            // Friction cone in the contact frame: ‖(fx, fy)‖ ≤ μ fz with f = Rᵀ f_world.
            let local: [LinExpr; 3] = [0, 1, 2].map(|c| {
                let mut e = LinExpr::default();
                for a in 0..3 {
                    e.add_term(f[a], rot[(a, c)]);
                }
                e
            });
            asm.b.add_soc(vec![
                local[2].scaled(cfg.friction_mu),
                local[0].clone(),
                local[1].clone(),
            ]);
            if let Some(limits) = cfg.end_effector(&phase.eef_id) {
                let mut cone = vec![LinExpr::constant(limits.reach())];
                cone.extend((0..3).map(|a| LinExpr::constant(phase.position[a]) - var(r[a])));
                asm.b.add_soc(cone);
            }
        }
        if let Some(d) = dt {
            let (mut lo, mut hi) = (cfg.dt_bounds.min, cfg.dt_bounds.max);
            if let TimeTreatment::Linearized { layout, x, radius } = time {
                let dbar = x[layout.idx(VarKey::Dt { t })];
                lo = lo.max(dbar - radius).min(hi);
                hi = hi.min(dbar + radius).max(lo);
            }
            asm.b.add_nonneg(var(d) + (-lo));
            asm.b.add_nonneg(-var(d) + hi);
        }

        // Running cost.
        let mut u = Vec::new();
        if t + 1 < n {
            let des = &init.desired[t];
            push_tracking(&mut u, &w.running_momentum_tracking, des, [r, l, k], m);
        }
        for &(_, _, f, tau, z) in &contacts {
            let sf = w.force_reg.sqrt();
            let st = w.torque_reg.sqrt();
            let sc = w.cop_reg.sqrt();
            if sf > 0.0 {
                u.extend(f.iter().map(|&i| LinExpr::term(i, sf)));
            }
            if st > 0.0 {
                u.push(LinExpr::term(tau, st));
            }
            if sc > 0.0 {
                u.extend(z.iter().map(|&i| LinExpr::term(i, sc)));
            }
        }
        if let Some(d) = dt {
            if w.dt_reg > 0.0 {
                let s = w.dt_reg.sqrt();
                u.push(LinExpr::term(d, s) + (-s * dt_nom));
            }
        }
        let e = asm.var(VarKey::Epigraph(Epigraph::Running(t)));
        asm.b.add_objective(&var(e));
        asm.b.add_square_epigraph(var(e), u);
    }

    if n > 0 {
        let t = n - 1;
        let idx = |f: fn(usize, usize) -> VarKey| [0, 1, 2].map(|a| asm.layout.idx(f(t, a)));
        let r = idx(|t, axis| VarKey::Com { t, axis });
        let l = idx(|t, axis| VarKey::Lin { t, axis });
        let k = idx(|t, axis| VarKey::Ang { t, axis });
        let mut u = Vec::new();
        push_tracking(&mut u, &w.terminal_state, &init.terminal, [r, l, k], m);
        let e = asm.var(VarKey::Epigraph(Epigraph::Terminal));
        asm.b.add_objective(&var(e));
        asm.b.add_square_epigraph(var(e), u);
    }
    asm.layout.dynamics_rows = 15 * n;
    if has_dt && mode == TimeMode::TimeOptFixedHorizon {
        let mut e = LinExpr::constant(-cfg.nominal_horizon());
        for &d in &dt_vars {
            e.add_term(d, 1.0);
        }
        asm.b.add_eq(e);
    }
    (asm.b.finish(), asm.layout)
}

fn with_axis(key: VarKey, axis: usize) -> VarKey {
    match key {
        VarKey::Lin { t, .. } => VarKey::Lin { t, axis },
        VarKey::LinRate { t, .. } => VarKey::LinRate { t, axis },
        VarKey::AngRate { t, .. } => VarKey::AngRate { t, axis },
        other => other,
    }
}

/// Appends `√w (x − target)` for the weighted `(r, l, k)` entries; momentum
/// targets are divided by the mass.
fn push_tracking(
    u: &mut Vec<LinExpr>,
    weights: &[f64; 9],
    target: &[f64; 9],
    vars: [[usize; 3]; 3],
    mass: f64,
) {
    for block in 0..3 {
        let div = if block == 0 { 1.0 } else { mass };
        for a in 0..3 {
            let wt = weights[3 * block + a];
            if wt > 0.0 {
                let s = wt.sqrt();
                u.push(LinExpr::term(vars[block][a], s) + (-s * target[3 * block + a] / div));
            }
        }
    }
}

/// Adds `2 p_valᵀ p − p̄ ≥ p_valᵀ p_val − σ` (and the same for `q`) for every
/// pair, with `p_val` evaluated at `prior`.
pub fn add_trust_regions(
    prog: &ConicProgram,
    layout: &RelaxedProblemLayout,
    prior: &[f64],
    sigma: f64,
) -> ConicProgram {
    let mut b = prog.to_builder();
    for (_, pair) in &layout.pairs {
        for (exprs, aux) in [(&pair.plus, pair.pbar), (&pair.minus, pair.qbar)] {
            b.add_nonneg(tangent(exprs, prior) - var(aux) + sigma);
        }
    }
    b.finish()
}

/// `p_valᵀ p_val + 2 p_valᵀ (p − p_val)`, the linearization of `‖p‖²`.
fn tangent(exprs: &[LinExpr], prior: &[f64]) -> LinExpr {
    let mut e = LinExpr::default();
    for ex in exprs {
        let v = ex.eval(prior);
        e += ex.scaled(2.0 * v) + (-v * v);
    }
    e.compact()
}

/// Adds `w (p̄ − lin p)²` to the objective for every auxiliary, with one
/// epigraph variable per timestep.
pub fn add_soft_penalties(
    prog: &ConicProgram,
    layout: &RelaxedProblemLayout,
    prior: &[f64],
    w: f64,
) -> ConicProgram {
    if w == 0.0 {
        return prog.clone();
    }
    let mut b = prog.to_builder();
    let s = w.sqrt();
    let mut per_step: Vec<Vec<LinExpr>> = vec![Vec::new(); layout.n_steps];
    for (key, pair) in &layout.pairs {
        for (exprs, aux) in [(&pair.plus, pair.pbar), (&pair.minus, pair.qbar)] {
            per_step[key.step()].push((var(aux) - tangent(exprs, prior)).scaled(s));
        }
    }
    for (t, u) in per_step.into_iter().enumerate() {
        if u.is_empty() {
            continue;
        }
        let e = b.add_variable(format!("penalty[{t}]"));
        b.add_objective(&var(e));
        b.add_square_epigraph(var(e), u);
    }
    b.finish()
}

/// Reads the trajectory and controls of a solution, undoing the mass scaling.
pub fn decode(
    scenario: &Scenario,
    layout: &RelaxedProblemLayout,
    x: &[f64],
) -> (CentroidalTrajectory, Vec<ControlStep>) {
    let cfg = &scenario.config;
    let m = cfg.mass;
    let v3 = |f: &dyn Fn(usize) -> VarKey| Vector3::from_fn(|a, _| x[layout.idx(f(a))]);
    let mut states = Vec::with_capacity(layout.n_steps);
    let mut dts = Vec::with_capacity(layout.n_steps);
    let mut controls = Vec::with_capacity(layout.n_steps);
    for t in 0..layout.n_steps {
        states.push(CentroidalState {
            r: v3(&|axis| VarKey::Com { t, axis }),
            l: v3(&|axis| VarKey::Lin { t, axis }) * m,
            k: v3(&|axis| VarKey::Ang { t, axis }) * m,
            ldot: v3(&|axis| VarKey::LinRate { t, axis }) * m,
            kdot: v3(&|axis| VarKey::AngRate { t, axis }) * m,
        });
        // Interior-point iterates overshoot active bounds by roughly the solver tolerance.
        let dt = if layout.has_dt {
            x[layout.idx(VarKey::Dt { t })].clamp(cfg.dt_bounds.min, cfg.dt_bounds.max)
        } else {
            cfg.nominal_dt
        };
        dts.push(dt);
        let contacts = layout.active[t]
            .iter()
            .map(|&eef| ContactControl {
                eef: scenario.plan.eef_ids[eef].clone(),
                force: v3(&|axis| VarKey::Force { t, eef, axis }) * m,
                torque: x[layout.idx(VarKey::Torque { t, eef })] * m,
                cop: nalgebra::Vector2::new(
                    x[layout.idx(VarKey::Cop { t, eef, axis: 0 })],
                    x[layout.idx(VarKey::Cop { t, eef, axis: 1 })],
                ),
            })
            .collect();
        controls.push(ControlStep { dt, contacts });
    }
    if layout.has_dt && cfg.time_mode == TimeMode::TimeOptFixedHorizon {
        close_horizon(&mut dts, cfg.nominal_horizon(), cfg.dt_bounds.min, cfg.dt_bounds.max);
        for (c, d) in controls.iter_mut().zip(&dts) {
            c.dt = *d;
        }
    }
    (CentroidalTrajectory { states, dt: dts }, controls)
}

/// Spreads the solver's residual on `Σ Δ = horizon` over the steps that have
/// room for it inside their bounds.
fn close_horizon(dts: &mut [f64], horizon: f64, lo: f64, hi: f64) {
    let residual = horizon - dts.iter().sum::<f64>();
    let free: Vec<usize> = (0..dts.len())
        .filter(|&t| dts[t] + residual.abs() < hi && dts[t] - residual.abs() > lo)
        .collect();
    if free.is_empty() {
        return;
    }
    let share = residual / free.len() as f64;
    for t in free {
        dts[t] += share;
    }
}

/// `(min, max)` of `p̄ − ‖p‖²` over every auxiliary.
pub fn aux_gap_range(layout: &RelaxedProblemLayout, x: &[f64]) -> Option<(f64, f64)> {
    let mut range: Option<(f64, f64)> = None;
    for (_, pair) in &layout.pairs {
        let (p, q) = pair.squares(x);
        for gap in [x[pair.pbar] - p, x[pair.qbar] - q] {
            range = Some(match range {
                None => (gap, gap),
                Some((lo, hi)) => (lo.min(gap), hi.max(gap)),
            });
        }
    }
    range
}

/// Moves every auxiliary onto `[‖p‖², lin p + σ]` (the upper end only with a
/// trust region), which the solver meets only up to its tolerance. Moves larger
/// than `max_rel · (1 + |p̄|)` are left alone. Returns the largest move made.
pub fn polish_auxiliaries(
    layout: &RelaxedProblemLayout,
    x: &mut [f64],
    trust: Option<(&[f64], f64)>,
    max_rel: f64,
) -> f64 {
    let mut largest = 0.0f64;
    for (_, pair) in &layout.pairs {
        for (exprs, aux) in [(&pair.plus, pair.pbar), (&pair.minus, pair.qbar)] {
            let lo: f64 = exprs.iter().map(|e| e.eval(x).powi(2)).sum();
            let hi = match trust {
                Some((prior, sigma)) => (tangent(exprs, prior).eval(x) + sigma).max(lo),
                None => f64::INFINITY,
            };
            let v = x[aux];
            let target = v.clamp(lo, hi);
            let shift = (target - v).abs();
            if shift > 0.0 && shift <= max_rel * (1.0 + v.abs()) {
                x[aux] = target;
                largest = largest.max(shift);
            }
        }
    }
    largest
}

