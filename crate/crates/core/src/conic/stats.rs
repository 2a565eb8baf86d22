//! Problem-size statistics.
//!
//! Counting convention: each second-order cone of dimension `d` contributes
//! `d` rows plus two expansion rows to the KKT system, and its scaling block
//! is stored sparsely as a diagonal plus two rank-one columns, giving
//! `3d + 2` nonzeros in the upper triangle. Orthant rows add one diagonal
//! entry each; the `x` and `y` blocks carry one regularization diagonal per row.

use serde::{Deserialize, Serialize};

use super::program::ConicProgram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KktStats {
    pub variables: usize,
    pub lin_eq: usize,
    pub lin_ineq: usize,
    pub soc_count: usize,
    pub kkt_size: usize,
    pub kkt_nnz: usize,
}

pub fn kkt_stats(prog: &ConicProgram) -> KktStats {
    let n = prog.n_vars();
    let p = prog.a.nrows;
    let m = prog.g.nrows;
    let n_soc = prog.cones.soc.len();
    let cone_nnz: usize = prog.cones.soc.iter().map(|d| 3 * d + 2).sum();
    KktStats {
        variables: n,
        lin_eq: p,
        lin_ineq: prog.cones.nonneg,
        soc_count: n_soc,
        kkt_size: n + p + m + 2 * n_soc,
        kkt_nnz: n + prog.a.nnz() + p + prog.g.nnz() + prog.cones.nonneg + cone_nnz,
    }
}
