//! Difference-of-convex splitting of the bilinear terms in the dynamics.
//!
//! A scalar product is written as `xᵀy = ¼(‖x + y‖² − ‖x − y‖²)`. Each split
//! introduces two auxiliary scalars `p̄`, `q̄` standing for the two squared
//! norms; the convex relaxation keeps only `p̄ ≥ ‖p‖²`, `q̄ ≥ ‖q‖²`.

use crate::conic::LinExpr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DcError {
    #[error("operands have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
}

/// One split product: `x·y = ¼(p̄ − q̄)` with `p̄ = ‖plus‖²`, `q̄ = ‖minus‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcPair {
    pub plus: Vec<LinExpr>,
    pub minus: Vec<LinExpr>,
    /// Variable indices of the auxiliaries.
    pub pbar: usize,
    pub qbar: usize,
}

impl DcPair {
    /// `¼(p̄ − q̄)` read from the auxiliary variables.
    pub fn relaxed_value(&self, x: &[f64]) -> f64 {
        0.25 * (x[self.pbar] - x[self.qbar])
    }

    /// `¼(‖plus‖² − ‖minus‖²)`, the exact bilinear value.
    pub fn exact_value(&self, x: &[f64]) -> f64 {
        0.25 * (squared_norm(&self.plus, x) - squared_norm(&self.minus, x))
    }

    /// `(‖plus‖², ‖minus‖²)` at `x`.
    pub fn squares(&self, x: &[f64]) -> (f64, f64) {
        (squared_norm(&self.plus, x), squared_norm(&self.minus, x))
    }

    /// The relaxed product as a linear expression in the auxiliaries.
    pub fn product_expr(&self) -> LinExpr {
        LinExpr::term(self.pbar, 0.25) + LinExpr::term(self.qbar, -0.25)
    }
}

pub fn squared_norm(e: &[LinExpr], x: &[f64]) -> f64 {
    e.iter().map(|t| t.eval(x).powi(2)).sum()
}

/// Splits `xᵀy`. `alloc` creates a new auxiliary variable from a name and
/// returns its index.
pub fn split_scalar_product(
    x: &[LinExpr],
    y: &[LinExpr],
    label: &str,
    alloc: &mut dyn FnMut(String) -> usize,
) -> Result<DcPair, DcError> {
    if x.len() != y.len() {
        return Err(DcError::DimensionMismatch(x.len(), y.len()));
    }
    let plus = x.iter().zip(y).map(|(a, b)| (a.clone() + b.clone()).compact()).collect();
    let minus = x.iter().zip(y).map(|(a, b)| (a.clone() - b.clone()).compact()).collect();
    Ok(DcPair {
        plus,
        minus,
        pbar: alloc(format!("pbar[{label}]")),
        qbar: alloc(format!("qbar[{label}]")),
    })
}

/// Splits the three components of `ℓ × f` into two-dimensional products:
/// `x: (−ℓz, ℓy)·(fy, fz)`, `y: (ℓz, −ℓx)·(fx, fz)`, `z: (−ℓy, ℓx)·(fx, fy)`.
///
/// `scale` multiplies the `ℓ` side and divides the `f` side, which leaves the
/// product unchanged and balances the magnitudes of the two operands.
pub fn decompose_cross_product(
    ell: &[LinExpr; 3],
    f: &[LinExpr; 3],
    scale: f64,
    label: &str,
    alloc: &mut dyn FnMut(String) -> usize,
) -> [DcPair; 3] {
    let l = |i: usize, s: f64| ell[i].scaled(s * scale);
    let g = |i: usize| f[i].scaled(1.0 / scale);
    let operands = [
        ([l(2, -1.0), l(1, 1.0)], [g(1), g(2)]),
        ([l(2, 1.0), l(0, -1.0)], [g(0), g(2)]),
        ([l(1, -1.0), l(0, 1.0)], [g(0), g(1)]),
    ];
    let mut k = 0;
    operands.map(|(a, b)| {
        let axis = ["x", "y", "z"][k];
        k += 1;
        split_scalar_product(&a, &b, &format!("{label}.{axis}"), alloc)
            .expect("both operands are two-dimensional")
    })
}

/// Splits `v·Δ` componentwise with `p = s·v + Δ/s`, `q = s·v − Δ/s`.
pub fn decompose_time_bilinear(
    v: &[LinExpr; 3],
    dt: &LinExpr,
    scale: f64,
    label: &str,
    alloc: &mut dyn FnMut(String) -> usize,
) -> [DcPair; 3] {
    let mut k = 0;
    [0, 1, 2].map(|i| {
        let axis = ["x", "y", "z"][k];
        k += 1;
        split_scalar_product(
            &[v[i].scaled(scale)],
            &[dt.scaled(1.0 / scale)],
            &format!("{label}.{axis}"),
            alloc,
        )
        .expect("scalar operands")
    })
}

/// Relaxed value of each pair, e.g. the three components of a cross product.
pub fn reconstruct(pairs: &[DcPair], x: &[f64]) -> Vec<f64> {
    pairs.iter().map(|p| p.relaxed_value(x)).collect()
}

/// Writes the exact squares into the auxiliary slots of `x`.
pub fn tighten(pairs: &[DcPair], x: &mut [f64]) {
    for p in pairs {
        let (a, b) = p.squares(x);
        x[p.pbar] = a;
        x[p.qbar] = b;
    }
}
