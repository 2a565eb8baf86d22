//! Sparse LDLᵀ factorization of quasi-definite matrices.
//!
//! Up-looking factorization over the elimination tree, after a fill-reducing
//! AMD permutation. No pivoting: the caller supplies the expected sign of each
//! pivot and tiny or wrong-signed pivots are replaced by `±delta`.

use super::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum LdlError {
    NotUpperTriangular,
    MissingDiagonal(usize),
    Ordering,
}

/// Symbolic analysis plus storage for repeated numeric factorizations of
/// matrices sharing one sparsity pattern.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// Permuted upper triangle.
    kp: CscMatrix,
    /// Position in `kp.nzval` of each entry of the input matrix.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    /// Expected pivot sign, permuted.
    signs: Vec<f64>,
    pub regularized_pivots: usize,
}

impl LdlFactor {
    /// Analyzes the upper triangle `k` (diagonal entries must be present).
    /// `signs[i]` is `+1` or `-1` for the expected sign of pivot `i`.
    pub fn new(k: &CscMatrix, signs: &[f64]) -> Result<Self, LdlError> {
        let n = k.ncols;
        for c in 0..n {
            let col = &k.rowval[k.colptr[c]..k.colptr[c + 1]];
            if col.iter().any(|&r| r > c) {
                return Err(LdlError::NotUpperTriangular);
            }
            if col.last() != Some(&c) {
                return Err(LdlError::MissingDiagonal(c));
            }
        }
        let perm = amd_order(k)?;
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Permuted upper triangle, remembering where each entry lands.
        let mut trip = Vec::with_capacity(k.nnz());
        for (r, c, _) in k.triplets() {
            let (a, b) = (iperm[r], iperm[c]);
            trip.push((a.min(b), a.max(b)));
        }
        let mut order: Vec<usize> = (0..trip.len()).collect();
        order.sort_by_key(|&i| (trip[i].1, trip[i].0));
        let mut colptr = vec![0; n + 1];
        let mut rowval = Vec::with_capacity(trip.len());
        let mut map = vec![0; trip.len()];
        for (pos, &i) in order.iter().enumerate() {
            let (r, c) = trip[i];
            rowval.push(r);
            colptr[c + 1] += 1;
            map[i] = pos;
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        let kp = CscMatrix {
            nrows: n,
            ncols: n,
            colptr,
            rowval,
            nzval: vec![0.0; trip.len()],
        };

        let (etree, lnz) = elimination_tree(&kp);
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let psigns = perm.iter().map(|&old| signs[old]).collect();
        Ok(Self {
            n,
            perm,
            kp,
            map,
            etree,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            signs: psigns,
            regularized_pivots: 0,
        })
    }

    /// Nonzeros in the strictly lower factor.
    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization of a matrix with the analyzed pattern, given by
    /// its nonzero values in input order.
    pub fn factor(&mut self, values: &[f64], eps: f64, delta: f64) {
        for (i, &pos) in self.map.iter().enumerate() {
            self.kp.nzval[pos] = values[i];
        }
        let n = self.n;
        let kp = &self.kp;
        let mut y_markers = vec![false; n];
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut elim_buffer = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.regularized_pivots = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in kp.colptr[k]..kp.colptr[k + 1] {
                let bidx = kp.rowval[p];
                if bidx == k {
                    self.d[k] = kp.nzval[p];
                    continue;
                }
                y_vals[bidx] = kp.nzval[p];
                if !y_markers[bidx] {
                    y_markers[bidx] = true;
                    elim_buffer[0] = bidx;
                    let mut n_elim = 1;
                    let mut next = self.etree[bidx];
                    while next != NONE && next < k {
                        if y_markers[next] {
                            break;
                        }
                        y_markers[next] = true;
                        elim_buffer[n_elim] = next;
                        n_elim += 1;
                        next = self.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        y_idx[nnz_y] = elim_buffer[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                let lval = yc * self.dinv[c];
                self.lx[tmp] = lval;
                self.d[k] -= yc * lval;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_markers[c] = false;
            }
            if self.signs[k] * self.d[k] < eps {
                self.d[k] = self.signs[k] * delta;
                self.regularized_pivots += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        debug_assert!(next_space.iter().zip(&self.lp[1..]).all(|(a, b)| a == b));
    }

    /// Solves `K x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}

fn elimination_tree(k: &CscMatrix) -> (Vec<usize>, Vec<usize>) {
    let n = k.ncols;
    let mut work = vec![NONE; n];
    let mut lnz = vec![0; n];
    let mut etree = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for p in k.colptr[j]..k.colptr[j + 1] {
            let mut i = k.rowval[p];
            while work[i] != j {
                if etree[i] == NONE {
                    etree[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = etree[i];
            }
        }
    }
    (etree, lnz)
}

/// AMD ordering of the symmetric pattern given by its upper triangle.
fn amd_order(k: &CscMatrix) -> Result<Vec<usize>, LdlError> {
    let n = k.ncols;
    if n == 0 {
        return Ok(Vec::new());
    }
    // AMD wants the full symmetric pattern.
    let mut trip = Vec::with_capacity(2 * k.nnz());
    for (r, c, _) in k.triplets() {
        trip.push((r, c, 1.0));
        if r != c {
            trip.push((c, r, 1.0));
        }
    }
    let full = CscMatrix::from_triplets(n, n, &trip);
    let ap: Vec<isize> = full.colptr.iter().map(|&v| v as isize).collect();
    let ai: Vec<isize> = full.rowval.iter().map(|&v| v as isize).collect();
    let (p, _, _) = amd::order::<isize>(n as isize, &ap, &ai, &amd::Control::default())
        .map_err(|_| LdlError::Ordering)?;
    Ok(p.into_iter().map(|v| v as usize).collect())
}
