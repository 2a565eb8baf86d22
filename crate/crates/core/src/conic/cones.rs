//! Nesterov–Todd scaling and Jordan-algebra helpers for products of the
//! nonnegative orthant and second-order cones.

use super::program::ConeLayout;

fn soc_residual(u: &[f64]) -> f64 {
    // u0² - ‖u1‖² in factored form for accuracy near the boundary.
    let n1 = norm(&u[1..]);
    (u[0] - n1) * (u[0] + n1)
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scaling point of one second-order cone: `W = η [w0 w1ᵀ; w1 I + w1 w1ᵀ/(1 + w0)]`
/// with `w0² - ‖w1‖² = 1`.
#[derive(Debug, Clone)]
pub(crate) struct SocScaling {
    pub eta: f64,
    pub w: Vec<f64>,
}

impl SocScaling {
    fn new(s: &[f64], z: &[f64]) -> Self {
        let s_res = soc_residual(s).max(f64::MIN_POSITIVE);
        let z_res = soc_residual(z).max(f64::MIN_POSITIVE);
        let (sn, zn) = (s_res.sqrt(), z_res.sqrt());
        let sb: Vec<f64> = s.iter().map(|v| v / sn).collect();
        let zb: Vec<f64> = z.iter().map(|v| v / zn).collect();
        let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
        let mut w = Vec::with_capacity(s.len());
        w.push((sb[0] + zb[0]) / (2.0 * gamma));
        w.extend(sb[1..].iter().zip(&zb[1..]).map(|(a, b)| (a - b) / (2.0 * gamma)));
        // Re-normalize so that w0² - ‖w1‖² = 1 holds to rounding.
        let wr = soc_residual(&w);
        if wr > 0.0 {
            let k = wr.sqrt();
            w.iter_mut().for_each(|v| *v /= k);
        }
        Self {
            eta: (s_res / z_res).sqrt().sqrt(),
            w,
        }
    }

    /// `out = W v` (or `W⁻¹ v` when `inverse`).
    fn apply(&self, v: &[f64], out: &mut [f64], inverse: bool) {
        let w0 = self.w[0];
        let w1 = &self.w[1..];
        let sign = if inverse { -1.0 } else { 1.0 };
        let scale = if inverse { 1.0 / self.eta } else { self.eta };
        let w1v1 = dot(w1, &v[1..]);
        out[0] = scale * (w0 * v[0] + sign * w1v1);
        let coef = sign * v[0] + w1v1 / (1.0 + w0);
        for i in 1..v.len() {
            out[i] = scale * (v[i] + coef * w1[i - 1]);
        }
    }

    /// Dense `W² = η² (2 w wᵀ - J)`, row-major.
    fn w2(&self) -> Vec<f64> {
        let d = self.w.len();
        let e2 = self.eta * self.eta;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = e2 * 2.0 * self.w[i] * self.w[j];
            }
        }
        m[0] -= e2;
        for i in 1..d {
            m[i * d + i] += e2;
        }
        m
    }
}

/// Nesterov–Todd scaling `W` of a cone product, with `W z = W⁻¹ s = λ`.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    /// `sqrt(s / z)` per orthant row.
    nonneg: Vec<f64>,
    soc: Vec<SocScaling>,
}

impl Scaling {
    pub fn new(cones: &ConeLayout, s: &[f64], z: &[f64]) -> Self {
        let nonneg = (0..cones.nonneg).map(|i| (s[i] / z[i]).sqrt()).collect();
        let soc = cones
            .soc_ranges()
            .map(|(o, d)| SocScaling::new(&s[o..o + d], &z[o..o + d]))
            .collect();
        Self { nonneg, soc }
    }

    pub fn apply(&self, cones: &ConeLayout, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, w) in self.nonneg.iter().enumerate() {
            out[i] = if inverse { v[i] / w } else { v[i] * w };
        }
        for ((o, d), sc) in cones.soc_ranges().zip(&self.soc) {
            sc.apply(&v[o..o + d], &mut out[o..o + d], inverse);
        }
        out
    }

    /// Diagonal entries of `W²` for orthant rows.
    pub fn nonneg_w2(&self) -> impl Iterator<Item = f64> + '_ {
        self.nonneg.iter().map(|w| w * w)
    }

    /// Dense row-major `W²` block per second-order cone.
    pub fn soc_w2(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.soc.iter().map(SocScaling::w2)
    }

    /// `W² v`
    pub fn apply_w2(&self, cones: &ConeLayout, v: &[f64]) -> Vec<f64> {
        let wv = self.apply(cones, v, false);
        self.apply(cones, &wv, false)
    }
}

/// Jordan product `u ∘ v`.
pub(crate) fn jordan_product(cones: &ConeLayout, u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for i in 0..cones.nonneg {
        out[i] = u[i] * v[i];
    }
    for (o, d) in cones.soc_ranges() {
        let (uu, vv) = (&u[o..o + d], &v[o..o + d]);
        out[o] = dot(uu, vv);
        for i in 1..d {
            out[o + i] = uu[0] * vv[i] + vv[0] * uu[i];
        }
    }
    out
}

/// Solves `λ ∘ x = v` for `x`.
pub(crate) fn jordan_div(cones: &ConeLayout, lambda: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..cones.nonneg {
        out[i] = v[i] / lambda[i];
    }
    for (o, d) in cones.soc_ranges() {
        let (l, vv) = (&lambda[o..o + d], &v[o..o + d]);
        let res = soc_residual(l);
        let x0 = (l[0] * vv[0] - dot(&l[1..], &vv[1..])) / res;
        out[o] = x0;
        for i in 1..d {
            out[o + i] = (vv[i] - x0 * l[i]) / l[0];
        }
    }
    out
}

/// Adds `alpha` times the cone identity `e` to `v`.
pub(crate) fn add_identity(cones: &ConeLayout, v: &mut [f64], alpha: f64) {
    for x in v.iter_mut().take(cones.nonneg) {
        *x += alpha;
    }
    for (o, _) in cones.soc_ranges() {
        v[o] += alpha;
    }
}

/// Smallest `α` with `u + α e` on the boundary of the cone; negative when `u`
/// is interior.
pub(crate) fn max_identity_shift(cones: &ConeLayout, u: &[f64]) -> f64 {
    let mut a = f64::NEG_INFINITY;
    for &x in u.iter().take(cones.nonneg) {
        a = a.max(-x);
    }
    for (o, d) in cones.soc_ranges() {
        a = a.max(norm(&u[o + 1..o + d]) - u[o]);
    }
    a
}

/// Largest step `α` such that `u + α d` stays in the cone, for `u` interior.
/// Returns `f64::INFINITY` when the ray never leaves the cone.
pub(crate) fn max_step(cones: &ConeLayout, u: &[f64], d: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..cones.nonneg {
        if d[i] < 0.0 {
            alpha = alpha.min(-u[i] / d[i]);
        }
    }
    for (o, n) in cones.soc_ranges() {
        alpha = alpha.min(soc_max_step(&u[o..o + n], &d[o..o + n]));
    }
    alpha
}

fn soc_max_step(u: &[f64], d: &[f64]) -> f64 {
    if u.len() == 1 {
        return if d[0] < 0.0 { -u[0] / d[0] } else { f64::INFINITY };
    }
    // (u0 + α d0)² - ‖u1 + α d1‖² = a α² + 2 b α + c with c > 0.
    let a = soc_residual(d);
    let b = u[0] * d[0] - dot(&u[1..], &d[1..]);
    let c = soc_residual(u).max(0.0);
    if a >= 0.0 && b >= 0.0 && d[0] >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let denom = -b + disc.sqrt();
    let mut alpha = if denom > 0.0 { c / denom } else { f64::INFINITY };
    // u0 + α d0 must stay nonnegative as well.
    if d[0] < 0.0 {
        alpha = alpha.min(-u[0] / d[0]);
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        u[0] = norm(&u[1..]) + rng.gen_range(0.01..2.0);
        u
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_same_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cones = ConeLayout { nonneg: 3, soc: vec![3, 5, 1] };
        for _ in 0..50 {
            let mut s = Vec::new();
            let mut z = Vec::new();
            for _ in 0..3 {
                s.push(rng.gen_range(0.01..3.0));
                z.push(rng.gen_range(0.01..3.0));
            }
            for &d in &cones.soc {
                s.extend(interior(&mut rng, d));
                z.extend(interior(&mut rng, d));
            }
            let w = Scaling::new(&cones, &s, &z);
            let wz = w.apply(&cones, &z, false);
            let winv_s = w.apply(&cones, &s, true);
            for (a, b) in wz.iter().zip(&winv_s) {
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
            }
            // W W⁻¹ = I and W² matches the dense block.
            let v: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let back = w.apply(&cones, &w.apply(&cones, &v, true), false);
            for (a, b) in back.iter().zip(&v) {
                assert!((a - b).abs() < 1e-10);
            }
            let w2v = w.apply_w2(&cones, &v);
            for ((o, d), blk) in cones.soc_ranges().zip(w.soc_w2()) {
                for i in 0..d {
                    let row: f64 = (0..d).map(|j| blk[i * d + j] * v[o + j]).sum();
                    assert!((row - w2v[o + i]).abs() < 1e-9 * (1.0 + row.abs()));
                }
            }
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cones = ConeLayout { nonneg: 2, soc: vec![4, 2] };
        let mut l = vec![rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
        l.extend(interior(&mut rng, 4));
        l.extend(interior(&mut rng, 2));
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = jordan_div(&cones, &l, &v);
        let back = jordan_product(&cones, &l, &x);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_length_reaches_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cones = ConeLayout { nonneg: 0, soc: vec![4] };
        for _ in 0..200 {
            let u = interior(&mut rng, 4);
            let d: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = max_step(&cones, &u, &d);
            let at = |t: f64| -> Vec<f64> { u.iter().zip(&d).map(|(x, y)| x + t * y).collect() };
            if a.is_finite() {
                let p = at(a);
                assert!((p[0] - norm(&p[1..])).abs() < 1e-9 * (1.0 + p[0].abs()));
                let q = at(0.999 * a);
                assert!(q[0] > norm(&q[1..]));
            } else {
                let q = at(1e6);
                assert!(q[0] >= norm(&q[1..]) - 1e-6 * q[0].abs());
            }
        }
    }

    #[test]
    fn identity_shift() {
        let cones = ConeLayout { nonneg: 1, soc: vec![3] };
        let u = vec![-0.5, 1.0, 3.0, 4.0];
        assert_eq!(max_identity_shift(&cones, &u), 4.0);
        let mut v = u.clone();
        add_identity(&cones, &mut v, 5.0);
        assert_eq!(v, vec![4.5, 6.0, 3.0, 4.0]);
    }
}
