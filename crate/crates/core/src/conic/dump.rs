//! Plain-text dump of a [`ConicProgram`].
//!
//! ```text
//! conic 1
//! dims <n> <p> <m>
//! cones <nonneg> <soc dims...>
//! c0 <value>
//! c <index> <value>            (nonzero entries only)
//! b <row> <value>
//! h <row> <value>
//! A <row> <col> <value>
//! G <row> <col> <value>
//! name <index> <name>
//! ```
//!
//! Indices are zero-based. Lines starting with `#` are ignored. Values are
//! written with full round-trip precision.

use std::fmt::Write as _;

use super::program::{ConeLayout, ConicProgram};
use super::sparse::CscMatrix;
use super::ConicError;

pub fn write_program(prog: &ConicProgram) -> String {
    let mut out = String::new();
    let (n, p, m) = (prog.n_vars(), prog.a.nrows, prog.g.nrows);
    let _ = writeln!(out, "conic 1");
    let _ = writeln!(out, "dims {n} {p} {m}");
    let _ = write!(out, "cones {}", prog.cones.nonneg);
    for d in &prog.cones.soc {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let _ = writeln!(out, "c0 {:e}", prog.c0);
    let vec_lines = |out: &mut String, tag: &str, v: &[f64]| {
        for (i, x) in v.iter().enumerate().filter(|(_, x)| **x != 0.0) {
            let _ = writeln!(out, "{tag} {i} {x:e}");
        }
    };
    vec_lines(&mut out, "c", &prog.c);
    vec_lines(&mut out, "b", &prog.b);
    vec_lines(&mut out, "h", &prog.h);
    for (r, c, v) in prog.a.triplets() {
        let _ = writeln!(out, "A {r} {c} {v:e}");
    }
    for (r, c, v) in prog.g.triplets() {
        let _ = writeln!(out, "G {r} {c} {v:e}");
    }
    for (i, name) in prog.var_names.iter().enumerate() {
        let _ = writeln!(out, "name {i} {name}");
    }
    out
}

pub fn read_program(text: &str) -> Result<ConicProgram, ConicError> {
    let err = |line: usize, msg: &str| ConicError::Dump(format!("line {}: {msg}", line + 1));
    let mut dims = None;
    let mut cones = None;
    let mut c0 = 0.0;
    let mut c = Vec::new();
    let mut b = Vec::new();
    let mut h = Vec::new();
    let mut a_trip = Vec::new();
    let mut g_trip = Vec::new();
    let mut names = Vec::new();
    let mut header = false;

    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<usize, ConicError> {
            rest.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| err(ln, "bad index"))
        };
        let val = |i: usize| -> Result<f64, ConicError> {
            rest.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| err(ln, "bad value"))
        };
        match tag {
            "conic" => {
                if rest != ["1"] {
                    return Err(err(ln, "unsupported format version"));
                }
                header = true;
            }
            _ if !header => return Err(err(ln, "missing header")),
            "dims" => {
                let d = (num(0)?, num(1)?, num(2)?);
                c = vec![0.0; d.0];
                b = vec![0.0; d.1];
                h = vec![0.0; d.2];
                dims = Some(d);
            }
            "cones" => {
                let v: Result<Vec<usize>, _> = (0..rest.len()).map(num).collect();
                let v = v?;
                let (first, soc) = v.split_first().ok_or_else(|| err(ln, "empty cone line"))?;
                cones = Some(ConeLayout { nonneg: *first, soc: soc.to_vec() });
            }
            "c0" => c0 = val(0)?,
            "c" | "b" | "h" => {
                let target = match tag {
                    "c" => &mut c,
                    "b" => &mut b,
                    _ => &mut h,
                };
                let i = num(0)?;
                *target.get_mut(i).ok_or_else(|| err(ln, "index out of range"))? = val(1)?;
            }
            "A" => a_trip.push((num(0)?, num(1)?, val(2)?)),
            "G" => g_trip.push((num(0)?, num(1)?, val(2)?)),
            "name" => {
                let i = num(0)?;
                if i != names.len() {
                    return Err(err(ln, "names must be listed in order"));
                }
                names.push(rest[1..].join(" "));
            }
            _ => return Err(err(ln, &format!("unknown record '{tag}'"))),
        }
    }
    let (n, p, m) = dims.ok_or_else(|| ConicError::Dump("missing dims".into()))?;
    let bounds = |t: &[(usize, usize, f64)], rows: usize| t.iter().all(|&(r, c, _)| r < rows && c < n);
    if !bounds(&a_trip, p) || !bounds(&g_trip, m) {
        return Err(ConicError::Dump("matrix entry out of range".into()));
    }
    let prog = ConicProgram {
        c,
        c0,
        a: CscMatrix::from_triplets(p, n, &a_trip),
        b,
        g: CscMatrix::from_triplets(m, n, &g_trip),
        h,
        cones: cones.ok_or_else(|| ConicError::Dump("missing cones".into()))?,
        var_names: names,
    };
    prog.check().map_err(ConicError::InvalidProgram)?;
    Ok(prog)
}
