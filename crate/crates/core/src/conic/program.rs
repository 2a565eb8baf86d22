//! Standard-form cone programs and an incremental builder.
//!
//! ```text
//! minimize    cᵀx + c0
//! subject to  A x = b
//!             G x + s = h,   s ∈ K
//! ```
//!
//! `K` is a product of one nonnegative orthant (the first `nonneg` rows of
//! `G`) followed by second-order cones `{(t, u) : ‖u‖ ≤ t}`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use super::sparse::CscMatrix;

/// Cone layout of the rows of `G`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConeLayout {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn rows(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree: one per orthant row, one per second-order cone.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    /// `(offset, dim)` of each second-order cone within the rows of `G`.
    pub fn soc_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.soc.iter().scan(self.nonneg, |off, &d| {
            let start = *off;
            *off += d;
            Some((start, d))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    pub c0: f64,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub g: CscMatrix,
    pub h: Vec<f64>,
    pub cones: ConeLayout,
    pub var_names: Vec<String>,
}

impl ConicProgram {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c0 + self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Checks that all dimensions agree and no explicit zeros are stored.
    pub fn check(&self) -> Result<(), String> {
        let n = self.c.len();
        if self.a.ncols != n || self.g.ncols != n {
            return Err(format!(
                "column mismatch: c has {n}, A has {}, G has {}",
                self.a.ncols, self.g.ncols
            ));
        }
        if self.a.nrows != self.b.len() {
            return Err("A rows differ from b".into());
        }
        if self.g.nrows != self.h.len() {
            return Err("G rows differ from h".into());
        }
        if self.cones.rows() != self.h.len() {
            return Err("cone dimensions do not sum to the rows of G".into());
        }
        if self.cones.soc.iter().any(|&d| d == 0) {
            return Err("empty second-order cone".into());
        }
        if self.a.nzval.iter().chain(&self.g.nzval).any(|v| *v == 0.0) {
            return Err("explicit zero in constraint matrix".into());
        }
        if !self.var_names.is_empty() && self.var_names.len() != n {
            return Err("variable name table has wrong length".into());
        }
        Ok(())
    }

    /// Reopens the program for appending variables, rows and objective terms.
    pub fn to_builder(&self) -> ProgramBuilder {
        let rows = |m: &CscMatrix, rhs: &[f64], negate: bool| -> Vec<LinExpr> {
            let mut out: Vec<LinExpr> = rhs
                .iter()
                .map(|&v| LinExpr::constant(if negate { v } else { -v }))
                .collect();
            for (r, c, v) in m.triplets() {
                out[r].terms.push((c, if negate { -v } else { v }));
            }
            out
        };
        // Ax = b  ->  Ax - b = 0 ;  Gx + s = h  ->  h - Gx ∈ K
        let eqs = rows(&self.a, &self.b, false);
        let g_rows = rows(&self.g, &self.h, true);
        let mut builder = ProgramBuilder {
            c: self.c.clone(),
            c0: self.c0,
            var_names: if self.var_names.is_empty() {
                (0..self.n_vars()).map(|i| format!("x{i}")).collect()
            } else {
                self.var_names.clone()
            },
            eqs,
            nonneg: g_rows[..self.cones.nonneg].to_vec(),
            socs: Vec::new(),
        };
        for (off, d) in self.cones.soc_ranges() {
            builder.socs.push(g_rows[off..off + d].to_vec());
        }
        builder
    }
}

/// Affine expression `Σ coef·x[idx] + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(idx: usize) -> Self {
        Self::term(idx, 1.0)
    }

    pub fn term(idx: usize, coef: f64) -> Self {
        Self {
            terms: vec![(idx, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Evaluates with a lookup that may fail for unknown variables.
    pub fn try_eval(&self, mut value: impl FnMut(usize) -> Option<f64>) -> Option<f64> {
        let mut acc = self.constant;
        for &(i, c) in &self.terms {
            acc += c * value(i)?;
        }
        Some(acc)
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) {
        self.terms.push((idx, coef));
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += rhs;
        self
    }
}

impl AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, s: f64) -> LinExpr {
        self.scaled(s)
    }
}

impl Add<f64> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, c: f64) -> LinExpr {
        self.constant += c;
        self
    }
}

/// Collects variables, constraints and objective terms, then emits a
/// [`ConicProgram`] with orthant rows ahead of the second-order cones.
#[derive(Debug, Clone, Default)]
pub struct ProgramBuilder {
    c: Vec<f64>,
    c0: f64,
    var_names: Vec<String>,
    eqs: Vec<LinExpr>,
    nonneg: Vec<LinExpr>,
    socs: Vec<Vec<LinExpr>>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>) -> usize {
        self.c.push(0.0);
        self.var_names.push(name.into());
        self.c.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_objective(&mut self, e: &LinExpr) {
        for &(i, v) in &e.terms {
            self.c[i] += v;
        }
        self.c0 += e.constant;
    }

    /// `e = 0`
    pub fn add_eq(&mut self, e: LinExpr) {
        self.eqs.push(e);
    }

    /// `e ≥ 0`
    pub fn add_nonneg(&mut self, e: LinExpr) {
        self.nonneg.push(e);
    }

    /// `‖(e[1], …)‖ ≤ e[0]`
    pub fn add_soc(&mut self, e: Vec<LinExpr>) {
        assert!(!e.is_empty(), "second-order cone needs at least one row");
        self.socs.push(e);
    }

    /// `t ≥ ‖u‖²` as the cone `‖(t - 1, 2u)‖ ≤ t + 1`.
    pub fn add_square_epigraph(&mut self, t: LinExpr, u: Vec<LinExpr>) {
        let mut rows = Vec::with_capacity(u.len() + 2);
        rows.push(t.clone() + 1.0);
        rows.push(t + (-1.0));
        rows.extend(u.into_iter().map(|e| e * 2.0));
        self.add_soc(rows);
    }

    pub fn n_eq(&self) -> usize {
        self.eqs.len()
    }

    pub fn finish(self) -> ConicProgram {
        let n = self.c.len();
        let mut a_trip = Vec::new();
        let mut b = Vec::with_capacity(self.eqs.len());
        for (r, e) in self.eqs.into_iter().enumerate() {
            let e = e.compact();
            a_trip.extend(e.terms.iter().map(|&(i, v)| (r, i, v)));
            b.push(-e.constant);
        }
        let mut g_trip = Vec::new();
        let mut h = Vec::new();
        let nonneg = self.nonneg.len();
        let mut soc = Vec::with_capacity(self.socs.len());
        let push_row = |e: LinExpr, g_trip: &mut Vec<(usize, usize, f64)>, h: &mut Vec<f64>| {
            let e = e.compact();
            let r = h.len();
            g_trip.extend(e.terms.iter().map(|&(i, v)| (r, i, -v)));
            h.push(e.constant);
        };
        for e in self.nonneg {
            push_row(e, &mut g_trip, &mut h);
        }
        for cone in self.socs {
            soc.push(cone.len());
            for e in cone {
                push_row(e, &mut g_trip, &mut h);
            }
        }
        let a = CscMatrix::from_triplets(b.len(), n, &a_trip);
        let g = CscMatrix::from_triplets(h.len(), n, &g_trip);
        ConicProgram {
            c: self.c,
            c0: self.c0,
            a,
            b,
            g,
            h,
            cones: ConeLayout { nonneg, soc },
            var_names: self.var_names,
        }
    }
}
