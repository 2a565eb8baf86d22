//! Primal-dual interior-point method on the homogeneous self-dual embedding.
//!
//! Mehrotra predictor-corrector with Nesterov–Todd scaling. Each iteration
//! factors one quasi-definite KKT matrix and solves three right-hand sides.

use std::time::Instant;

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use super::cones::{
    add_identity, dot, jordan_div, jordan_product, max_identity_shift, max_step, Scaling,
};
use super::ldl::LdlFactor;
use super::program::{ConeLayout, ConicProgram};
use super::sparse::CscMatrix;
use super::ConicError;

const STATIC_REG: f64 = 1e-8;
const DYN_EPS: f64 = 1e-13;
const DYN_DELTA: f64 = 1e-7;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 10;
const RUIZ_PASSES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Stopped early but within a looser tolerance.
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        matches!(self, Self::Optimal | Self::AlmostOptimal)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Optimal => "optimal",
            Self::AlmostOptimal => "almost_optimal",
            Self::PrimalInfeasible => "primal_infeasible",
            Self::DualInfeasible => "dual_infeasible",
            Self::MaxIter => "max_iter",
            Self::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Tolerance factor accepted when the method stalls.
    pub loose_factor: f64,
    pub equilibrate: bool,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100,
            loose_factor: 1e3,
            equilibrate: true,
        }
    }
}

/// Solver output. For infeasible problems `x`, `y`, `z`, `s` hold the
/// normalized certificate instead of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub pobj: f64,
    pub dobj: f64,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
    pub iterations: usize,
    pub solve_time: f64,
}

struct Kkt {
    n: usize,
    p: usize,
    factor: LdlFactor,
    values: Vec<f64>,
    /// Positions in `values` of the x, y diagonals and of the z block entries.
    x_diag: Vec<usize>,
    y_diag: Vec<usize>,
    nonneg_diag: Vec<usize>,
    /// Per cone, row-major `d×d` positions (upper entries only, lower left as `usize::MAX`).
    soc_pos: Vec<Vec<usize>>,
}

impl Kkt {
    fn new(a: &CscMatrix, g: &CscMatrix, cones: &ConeLayout) -> Result<Self, ConicError> {
        let (n, p, m) = (a.ncols, a.nrows, g.nrows);
        let zoff = n + p;
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        let mut tags = Vec::new();
        #[derive(Clone, Copy)]
        enum Tag {
            Data,
            X(usize),
            Y(usize),
            Nonneg(usize),
            Soc(usize, usize, usize),
        }
        for j in 0..n {
            trip.push((j, j, STATIC_REG));
            tags.push(Tag::X(j));
        }
        for (i, j, v) in a.triplets() {
            trip.push((j, n + i, v));
            tags.push(Tag::Data);
        }
        for i in 0..p {
            trip.push((n + i, n + i, -STATIC_REG));
            tags.push(Tag::Y(i));
        }
        for (i, j, v) in g.triplets() {
            trip.push((j, zoff + i, v));
            tags.push(Tag::Data);
        }
        for i in 0..cones.nonneg {
            trip.push((zoff + i, zoff + i, -1.0));
            tags.push(Tag::Nonneg(i));
        }
        for (k, (o, d)) in cones.soc_ranges().enumerate() {
            for c in 0..d {
                for r in 0..=c {
                    trip.push((zoff + o + r, zoff + o + c, if r == c { -1.0 } else { 0.0 }));
                    tags.push(Tag::Soc(k, r, c));
                }
            }
        }
        let dim = n + p + m;
        let mut order: Vec<usize> = (0..trip.len()).collect();
        order.sort_by_key(|&i| (trip[i].1, trip[i].0));
        let mut colptr = vec![0; dim + 1];
        let mut rowval = Vec::with_capacity(trip.len());
        let mut nzval = Vec::with_capacity(trip.len());
        let mut x_diag = vec![0; n];
        let mut y_diag = vec![0; p];
        let mut nonneg_diag = vec![0; cones.nonneg];
        let mut soc_pos: Vec<Vec<usize>> = cones.soc.iter().map(|&d| vec![usize::MAX; d * d]).collect();
        for (pos, &i) in order.iter().enumerate() {
            let (r, c, v) = trip[i];
            rowval.push(r);
            nzval.push(v);
            colptr[c + 1] += 1;
            match tags[i] {
                Tag::Data => {}
                Tag::X(j) => x_diag[j] = pos,
                Tag::Y(j) => y_diag[j] = pos,
                Tag::Nonneg(j) => nonneg_diag[j] = pos,
                Tag::Soc(k, r, c) => {
                    let d = cones.soc[k];
                    soc_pos[k][r * d + c] = pos;
                }
            }
        }
        for c in 0..dim {
            colptr[c + 1] += colptr[c];
        }
        let pattern = CscMatrix {
            nrows: dim,
            ncols: dim,
            colptr,
            rowval,
            nzval,
        };
        let signs: Vec<f64> = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let factor = LdlFactor::new(&pattern, &signs)
            .map_err(|e| ConicError::Factorization(format!("{e:?}")))?;
        debug!("kkt: dim {dim}, nnz {}, nnz(L) {}", pattern.nnz(), factor.nnz_l());
        Ok(Self {
            n,
            p,
            factor,
            values: pattern.nzval,
            x_diag,
            y_diag,
            nonneg_diag,
            soc_pos,
        })
    }

    /// Factors `[[δI, Aᵀ, Gᵀ], [A, -δI, 0], [G, 0, -(W² + δI)]]`; `None` means `W = I`.
    fn factor(&mut self, cones: &ConeLayout, w: Option<&Scaling>) {
        for &i in &self.x_diag {
            self.values[i] = STATIC_REG;
        }
        for &i in &self.y_diag {
            self.values[i] = -STATIC_REG;
        }
        match w {
            None => {
                for &i in &self.nonneg_diag {
                    self.values[i] = -1.0 - STATIC_REG;
                }
                for (k, pos) in self.soc_pos.iter().enumerate() {
                    let d = cones.soc[k];
                    for r in 0..d {
                        for c in r..d {
                            self.values[pos[r * d + c]] = if r == c { -1.0 - STATIC_REG } else { 0.0 };
                        }
                    }
                }
            }
            Some(w) => {
                for (&i, w2) in self.nonneg_diag.iter().zip(w.nonneg_w2()) {
                    self.values[i] = -w2 - STATIC_REG;
                }
                for ((k, pos), block) in self.soc_pos.iter().enumerate().zip(w.soc_w2()) {
                    let d = cones.soc[k];
                    for r in 0..d {
                        for c in r..d {
                            let reg = if r == c { STATIC_REG } else { 0.0 };
                            self.values[pos[r * d + c]] = -block[r * d + c] - reg;
                        }
                    }
                }
            }
        }
        self.factor.factor(&self.values, DYN_EPS, DYN_DELTA);
        if self.factor.regularized_pivots > 0 {
            trace!("kkt: {} pivots regularized", self.factor.regularized_pivots);
        }
    }

    /// Solves against the unregularized matrix using iterative refinement.
    fn solve(&self, prob: &Scaled, w: Option<&Scaling>, rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.factor.solve(&mut sol);
        let bnorm = inf_norm(rhs);
        for _ in 0..REFINE_STEPS {
            let mut res = rhs.to_vec();
            let kv = self.apply(prob, w, &sol);
            for (r, k) in res.iter_mut().zip(&kv) {
                *r -= k;
            }
            if inf_norm(&res) <= 1e-14 * (1.0 + bnorm) {
                break;
            }
            self.factor.solve(&mut res);
            for (s, r) in sol.iter_mut().zip(&res) {
                *s += r;
            }
        }
        sol
    }

    fn apply(&self, prob: &Scaled, w: Option<&Scaling>, v: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let (vx, vy, vz) = (&v[..n], &v[n..n + p], &v[n + p..]);
        let mut out = vec![0.0; v.len()];
        {
            let (ox, rest) = out.split_at_mut(n);
            let (oy, oz) = rest.split_at_mut(p);
            prob.a.gemv_t(1.0, vy, ox);
            prob.g.gemv_t(1.0, vz, ox);
            prob.a.gemv(1.0, vx, oy);
            prob.g.gemv(1.0, vx, oz);
            let w2z = match w {
                Some(w) => w.apply_w2(&prob.cones, vz),
                None => vz.to_vec(),
            };
            for (o, v) in oz.iter_mut().zip(w2z) {
                *o -= v;
            }
        }
        out
    }
}

/// Equilibrated copy of the program with its scaling factors.
struct Scaled {
    c: Vec<f64>,
    a: CscMatrix,
    b: Vec<f64>,
    g: CscMatrix,
    h: Vec<f64>,
    cones: ConeLayout,
    /// Column scaling `x = D x̃`.
    d: Vec<f64>,
    /// Row scalings `y = E_A ỹ`, `z = E_G z̃`.
    ea: Vec<f64>,
    eg: Vec<f64>,
}

impl Scaled {
    fn new(prog: &ConicProgram, equilibrate: bool) -> Self {
        let n = prog.n_vars();
        let (p, m) = (prog.a.nrows, prog.g.nrows);
        let mut d = vec![1.0; n];
        let mut ea = vec![1.0; p];
        let mut eg = vec![1.0; m];
        if equilibrate {
            let mut block = vec![0usize; m];
            for (k, (o, dim)) in prog.cones.soc_ranges().enumerate() {
                for r in o..o + dim {
                    block[r] = k + 1;
                }
            }
            for _ in 0..RUIZ_PASSES {
                let mut col_max = vec![0.0f64; n];
                let mut ra = vec![0.0f64; p];
                let mut rg = vec![0.0f64; m];
                for (i, j, v) in prog.a.triplets() {
                    let x = (v * ea[i] * d[j]).abs();
                    col_max[j] = col_max[j].max(x);
                    ra[i] = ra[i].max(x);
                }
                for (i, j, v) in prog.g.triplets() {
                    let x = (v * eg[i] * d[j]).abs();
                    col_max[j] = col_max[j].max(x);
                    rg[i] = rg[i].max(x);
                }
                // Cones share one factor so that the scaled slack stays in the cone.
                let mut cone_max = vec![0.0f64; prog.cones.soc.len() + 1];
                for i in prog.cones.nonneg..m {
                    cone_max[block[i]] = cone_max[block[i]].max(rg[i]);
                }
                for i in prog.cones.nonneg..m {
                    rg[i] = cone_max[block[i]];
                }
                let fix = |x: f64| if x > 0.0 { 1.0 / x.sqrt() } else { 1.0 };
                for j in 0..n {
                    d[j] *= fix(col_max[j]);
                }
                for i in 0..p {
                    ea[i] *= fix(ra[i]);
                }
                for i in 0..m {
                    eg[i] *= fix(rg[i]);
                }
            }
        }
        let scale = |mat: &CscMatrix, rows: &[f64]| -> CscMatrix {
            let mut out = mat.clone();
            for c in 0..mat.ncols {
                for k in mat.colptr[c]..mat.colptr[c + 1] {
                    out.nzval[k] *= rows[mat.rowval[k]] * d[c];
                }
            }
            out
        };
        Self {
            c: prog.c.iter().zip(&d).map(|(c, d)| c * d).collect(),
            a: scale(&prog.a, &ea),
            b: prog.b.iter().zip(&ea).map(|(b, e)| b * e).collect(),
            g: scale(&prog.g, &eg),
            h: prog.h.iter().zip(&eg).map(|(h, e)| h * e).collect(),
            cones: prog.cones.clone(),
            d,
            ea,
            eg,
        }
    }

    fn unscale(&self, it: &Iterate) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = it.x.iter().zip(&self.d).map(|(x, d)| x * d).collect();
        let y = it.y.iter().zip(&self.ea).map(|(y, e)| y * e).collect();
        let z = it.z.iter().zip(&self.eg).map(|(z, e)| z * e).collect();
        let s = it.s.iter().zip(&self.eg).map(|(s, e)| s / e).collect();
        (x, y, z, s)
    }
}

#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

#[derive(Debug, Clone, Copy)]
struct Metrics {
    pres: f64,
    dres: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
    primal_infeas: Option<f64>,
    dual_infeas: Option<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Residuals in the original (unequilibrated) data.
fn metrics(prog: &ConicProgram, x: &[f64], y: &[f64], z: &[f64], s: &[f64], tau: f64) -> Metrics {
    let n = prog.n_vars();
    let bnorm = inf_norm(&prog.b);
    let hnorm = inf_norm(&prog.h);
    let cnorm = inf_norm(&prog.c);

    let mut ax = vec![0.0; prog.a.nrows];
    prog.a.gemv(1.0, x, &mut ax);
    let mut gxs = s.to_vec();
    prog.g.gemv(1.0, x, &mut gxs);
    let mut aty = vec![0.0; n];
    prog.a.gemv_t(1.0, y, &mut aty);
    prog.g.gemv_t(1.0, z, &mut aty);

    let mut pr = 0.0f64;
    for (v, b) in ax.iter().zip(&prog.b) {
        pr = pr.max((v / tau - b).abs());
    }
    let mut pr_g = 0.0f64;
    for (v, h) in gxs.iter().zip(&prog.h) {
        pr_g = pr_g.max((v / tau - h).abs());
    }
    let mut dr = 0.0f64;
    for (v, c) in aty.iter().zip(&prog.c) {
        dr = dr.max((v / tau + c).abs());
    }
    let ctx = dot(&prog.c, x);
    let bty_htz = dot(&prog.b, y) + dot(&prog.h, z);

    let primal_infeas = (bty_htz < 0.0).then(|| inf_norm(&aty) / -bty_htz);
    let dual_infeas = (ctx < 0.0).then(|| inf_norm(&ax).max(inf_norm(&gxs)) / -ctx);

    Metrics {
        pres: (pr / (1.0 + bnorm)).max(pr_g / (1.0 + hnorm)),
        dres: dr / (1.0 + cnorm),
        gap: dot(s, z) / (tau * tau),
        pobj: ctx / tau + prog.c0,
        dobj: -bty_htz / tau + prog.c0,
        primal_infeas,
        dual_infeas,
    }
}

fn is_optimal(m: &Metrics, tol: f64) -> bool {
    merit(m) <= tol
}

/// Smallest tolerance at which `m` passes the optimality test.
fn merit(m: &Metrics) -> f64 {
    let scale = m.pobj.abs().min(m.dobj.abs()).max(1.0);
    let v = m
        .pres
        .max(m.dres)
        .max(m.gap / scale)
        .max((m.pobj - m.dobj).abs() / (10.0 * scale));
    if v.is_nan() { f64::INFINITY } else { v }
}

/// Iterations without a better merit before a stalled run is cut short.
const STALL_ITERS: usize = 5;

/// Solves `prog` with the homogeneous interior-point method.
pub fn solve(prog: &ConicProgram, settings: &IpmSettings) -> Result<ConicSolution, ConicError> {
    prog.check().map_err(ConicError::InvalidProgram)?;
    let start = Instant::now();
    let sp = Scaled::new(prog, settings.equilibrate);
    let cones = &sp.cones;
    let (n, p, m) = (prog.n_vars(), prog.a.nrows, prog.g.nrows);
    let nu = cones.degree() as f64;
    let mut kkt = Kkt::new(&sp.a, &sp.g, cones)?;

    let stack = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<f64> {
        let mut v = Vec::with_capacity(n + p + m);
        v.extend_from_slice(a);
        v.extend_from_slice(b);
        v.extend_from_slice(c);
        v
    };

    // Initial point: least-squares primal and dual estimates shifted into the cone.
    kkt.factor(cones, None);
    let primal = kkt.solve(&sp, None, &stack(&vec![0.0; n], &sp.b, &sp.h));
    let dual = kkt.solve(&sp, None, &stack(&sp.c.iter().map(|c| -c).collect::<Vec<_>>(), &vec![0.0; p], &vec![0.0; m]));
    let mut s: Vec<f64> = primal[n + p..].iter().map(|v| -v).collect();
    let shift = max_identity_shift(cones, &s);
    if shift >= 0.0 {
        add_identity(cones, &mut s, 1.0 + shift);
    }
    let mut z = dual[n + p..].to_vec();
    let shift = max_identity_shift(cones, &z);
    if shift >= 0.0 {
        add_identity(cones, &mut z, 1.0 + shift);
    }
    let mut it = Iterate {
        x: primal[..n].to_vec(),
        y: dual[n..n + p].to_vec(),
        z,
        s,
        tau: 1.0,
        kappa: 1.0,
    };

    let minus_c: Vec<f64> = sp.c.iter().map(|c| -c).collect();
    let rhs1 = stack(&minus_c, &sp.b, &sp.h);
    let mut last = None;
    let mut best: Option<(f64, usize, Iterate, Metrics)> = None;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let (ux, uy, uz, us) = sp.unscale(&it);
        let met = metrics(prog, &ux, &uy, &uz, &us, it.tau);
        debug!(
            "ipm {iter:3} pobj {:+.6e} dobj {:+.6e} pres {:.1e} dres {:.1e} gap {:.1e} tau {:.1e} kappa {:.1e}",
            met.pobj, met.dobj, met.pres, met.dres, met.gap, it.tau, it.kappa
        );
        last = Some(met);
        let score = merit(&met);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, iter, it.clone(), met));
        }
        if is_optimal(&met, settings.tol) {
            status = SolveStatus::Optimal;
            break;
        }
        if met.primal_infeas.is_some_and(|r| r <= settings.tol) {
            status = SolveStatus::PrimalInfeasible;
            break;
        }
        if met.dual_infeas.is_some_and(|r| r <= settings.tol) {
            status = SolveStatus::DualInfeasible;
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        if best.as_ref().is_some_and(|b| {
            iter >= b.1 + STALL_ITERS && b.0 <= settings.tol * settings.loose_factor
        }) {
            debug!("ipm stalled at {iter}");
            break;
        }

        // Residuals of the embedding in scaled space.
        let mut r1 = minus_c.iter().map(|c| -c * it.tau).collect::<Vec<_>>();
        sp.a.gemv_t(1.0, &it.y, &mut r1);
        sp.g.gemv_t(1.0, &it.z, &mut r1);
        let mut r2: Vec<f64> = sp.b.iter().map(|b| -b * it.tau).collect();
        sp.a.gemv(1.0, &it.x, &mut r2);
        let mut r3: Vec<f64> = it.s.iter().zip(&sp.h).map(|(s, h)| s - h * it.tau).collect();
        sp.g.gemv(1.0, &it.x, &mut r3);
        let r4 = dot(&sp.c, &it.x) + dot(&sp.b, &it.y) + dot(&sp.h, &it.z) + it.kappa;

        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / (nu + 1.0);
        let w = Scaling::new(cones, &it.s, &it.z);
        let lambda = w.apply(cones, &it.z, false);
        kkt.factor(cones, Some(&w));
        let v1 = kkt.solve(&sp, Some(&w), &rhs1);
        let cv1 = dot(&sp.c, &v1[..n]) + dot(&sp.b, &v1[n..n + p]) + dot(&sp.h, &v1[n + p..]);

        let direction = |eta: f64, ds: &[f64], dk: f64| {
            let w_ld = w.apply(cones, &jordan_div(cones, &lambda, ds), false);
            let rz: Vec<f64> = r3.iter().zip(&w_ld).map(|(r, v)| -eta * r - v).collect();
            let r1n: Vec<f64> = r1.iter().map(|r| -eta * r).collect();
            let r2n: Vec<f64> = r2.iter().map(|r| -eta * r).collect();
            let v2 = kkt.solve(&sp, Some(&w), &stack(&r1n, &r2n, &rz));
            let cv2 = dot(&sp.c, &v2[..n]) + dot(&sp.b, &v2[n..n + p]) + dot(&sp.h, &v2[n + p..]);
            let dtau = (-eta * r4 - dk / it.tau - cv2) / (cv1 - it.kappa / it.tau);
            let mut dv = v2;
            axpy(dtau, &v1, &mut dv);
            let w2dz = w.apply_w2(cones, &dv[n + p..]);
            let dsv: Vec<f64> = w_ld.iter().zip(&w2dz).map(|(a, b)| a - b).collect();
            let dkappa = (dk - it.kappa * dtau) / it.tau;
            (dv, dsv, dtau, dkappa)
        };
        let step_len = |dv: &[f64], dsv: &[f64], dtau: f64, dkappa: f64| {
            let mut a = max_step(cones, &it.s, dsv).min(max_step(cones, &it.z, &dv[n + p..]));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // Predictor.
        let ll = jordan_product(cones, &lambda, &lambda);
        let ds_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
        let (dv_a, dsv_a, dtau_a, dkappa_a) = direction(1.0, &ds_aff, -it.tau * it.kappa);
        let alpha_a = step_len(&dv_a, &dsv_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_a).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let wi_ds = w.apply(cones, &dsv_a, true);
        let w_dz = w.apply(cones, &dv_a[n + p..], false);
        let cross = jordan_product(cones, &wi_ds, &w_dz);
        let mut ds: Vec<f64> = ll.iter().zip(&cross).map(|(a, b)| -a - b).collect();
        add_identity(cones, &mut ds, sigma * mu);
        let dk = -it.tau * it.kappa - dtau_a * dkappa_a + sigma * mu;
        let (dv, dsv, dtau, dkappa) = direction(1.0 - sigma, &ds, dk);
        let alpha = (STEP_FRACTION * step_len(&dv, &dsv, dtau, dkappa)).min(1.0);
        trace!("ipm {iter:3} alpha_aff {alpha_a:.3e} sigma {sigma:.3e} alpha {alpha:.3e}");

        if !alpha.is_finite() || alpha < 1e-10 || dv.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        axpy(alpha, &dv[..n], &mut it.x);
        axpy(alpha, &dv[n..n + p], &mut it.y);
        axpy(alpha, &dv[n + p..], &mut it.z);
        axpy(alpha, &dsv, &mut it.s);
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
    }

    let mut met = last.expect("at least one iteration is evaluated");
    if matches!(status, SolveStatus::MaxIter | SolveStatus::NumericalFailure) {
        // Fall back to the best iterate seen when the run did not finish cleanly.
        if let Some((score, _, b, bm)) = best {
            if score <= settings.tol * settings.loose_factor {
                status = SolveStatus::AlmostOptimal;
                it = b;
                met = bm;
            }
        }
    }
    let (mut x, mut y, mut z, mut s) = sp.unscale(&it);
    match status {
        SolveStatus::PrimalInfeasible => {
            let k = -(dot(&prog.b, &y) + dot(&prog.h, &z));
            for v in y.iter_mut().chain(z.iter_mut()) {
                *v /= k;
            }
            x.iter_mut().for_each(|v| *v = f64::NAN);
            s.iter_mut().for_each(|v| *v = f64::NAN);
        }
        SolveStatus::DualInfeasible => {
            let k = -dot(&prog.c, &x);
            for v in x.iter_mut().chain(s.iter_mut()) {
                *v /= k;
            }
            y.iter_mut().for_each(|v| *v = f64::NAN);
            z.iter_mut().for_each(|v| *v = f64::NAN);
        }
        _ => {
            for v in x.iter_mut().chain(&mut y).chain(&mut z).chain(&mut s) {
                *v /= it.tau;
            }
        }
    }
    Ok(ConicSolution {
        status,
        x,
        y,
        z,
        s,
        pobj: met.pobj,
        dobj: met.dobj,
        pres: met.pres,
        dres: met.dres,
        gap: met.gap,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
    })
}
