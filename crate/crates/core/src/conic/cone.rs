//! Cone arithmetic for the product of a nonnegative orthant and second-order
//! cones, plus Nesterov–Todd scaling.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Layout of a cone vector: `ml` orthant entries followed by SOC blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct Dims {
    pub ml: usize,
    pub soc: Vec<usize>,
}

impl Dims {
    pub fn m(&self) -> usize {
        self.ml + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree: one per orthant entry and per SOC block.
    pub fn degree(&self) -> usize {
        self.ml + self.soc.len()
    }

    /// `(offset, len)` of each SOC block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.soc.iter().scan(self.ml, |off, &len| {
            let o = *off;
            *off += len;
            Some((o, len))
        })
    }

    /// Identity element e.
    pub fn unit(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.m());
        e.rows_mut(0, self.ml).fill(1.0);
        for (o, _) in self.blocks() {
            e[o] = 1.0;
        }
        e
    }

    /// Jordan product u ∘ v.
    pub fn product(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for i in 0..self.ml {
            out[i] = u[i] * v[i];
        }
        for (o, len) in self.blocks() {
            let (u0, v0) = (u[o], v[o]);
            out[o] = u.rows(o, len).dot(&v.rows(o, len));
            for i in o + 1..o + len {
                out[i] = u0 * v[i] + v0 * u[i];
            }
        }
        out
    }

    /// Solve `l ∘ x = v` for x, with l in the cone interior.
    pub fn inv_product(&self, l: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for i in 0..self.ml {
            out[i] = v[i] / l[i];
        }
        for (o, len) in self.blocks() {
            let l0 = l[o];
            let l1 = l.rows(o + 1, len - 1);
            let v1 = v.rows(o + 1, len - 1);
            let det = l0 * l0 - l1.norm_squared();
            let x0 = (l0 * v[o] - l1.dot(&v1)) / det;
            out[o] = x0;
            for i in 1..len {
                out[o + i] = (v[o + i] - x0 * l[o + i]) / l0;
            }
        }
        out
    }

    /// Largest α with `x + α·dx` in the cone (x interior); ∞ if unbounded.
    pub fn max_step(&self, x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.ml {
            if dx[i] < 0.0 {
                alpha = alpha.min(-x[i] / dx[i]);
            }
        }
        for (o, len) in self.blocks() {
            let x0 = x[o];
            let d0 = dx[o];
            let x1 = x.rows(o + 1, len - 1);
            let d1 = dx.rows(o + 1, len - 1);
            let a = d0 * d0 - d1.norm_squared();
            let b = x0 * d0 - x1.dot(&d1);
            let c = (x0 * x0 - x1.norm_squared()).max(0.0);
            alpha = alpha.min(first_positive_root(a, b, c));
        }
        alpha
    }

    /// Smallest α with `x + α·e` in the closed cone.
    pub fn interior_shift(&self, x: &DVector<f64>) -> f64 {
        let mut alpha = f64::NEG_INFINITY;
        for i in 0..self.ml {
            alpha = alpha.max(-x[i]);
        }
        for (o, len) in self.blocks() {
            alpha = alpha.max(x.rows(o + 1, len - 1).norm() - x[o]);
        }
        alpha
    }
}

/// First α > 0 where `aα² + 2bα + c` crosses zero, given c ≥ 0.
fn first_positive_root(a: f64, b: f64, c: f64) -> f64 {
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let t = -(b + disc.sqrt().copysign(b));
    let mut best = f64::INFINITY;
    if a != 0.0 {
        let r = t / a;
        if r > 0.0 {
            best = best.min(r);
        }
    }
    if t != 0.0 {
        let r = c / t;
        if r > 0.0 {
            best = best.min(r);
        }
    }
    if c == 0.0 && (b < 0.0 || (b == 0.0 && a < 0.0)) {
        best = 0.0;
    }
    best
}

/// `xᵀJx` as a product of two factors, to limit cancellation.
fn j_norm_sq(x: &DVector<f64>) -> f64 {
    let r = x.rows(1, x.len() - 1).norm();
    (x[0] - r) * (x[0] + r)
}

/// NT scaling of one SOC pair: `η` and the unit hyperbolic vector w̄.
fn nt_pair(s: &DVector<f64>, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let sjs = j_norm_sq(s);
    let zjz = j_norm_sq(z);
    if !(sjs > 0.0 && zjz > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
        return Err(Error::Solver("iterate left the second-order cone".into()));
    }
    let sbar = s / sjs.sqrt();
    let zbar = z / zjz.sqrt();
    let gamma = ((1.0 + sbar.dot(&zbar)) / 2.0).sqrt();
    let mut w = sbar;
    w[0] += zbar[0];
    for i in 1..w.len() {
        w[i] -= zbar[i];
    }
    w /= 2.0 * gamma;
    Ok(((sjs / zjz).powf(0.25), w))
}

/// v = (w̄ + e)/√(2(w̄₀ + 1)), so that W = η(2vvᵀ − J).
fn hyperbolic_vector(mut w: DVector<f64>) -> DVector<f64> {
    let denom = (2.0 * (w[0] + 1.0)).sqrt();
    w[0] += 1.0;
    w / denom
}

/// Nesterov–Todd scaling W with `W z = W⁻¹ s = λ`.
#[derive(Clone, Debug)]
pub(crate) struct Scaling {
    orthant: Vec<f64>,
    soc: Vec<(f64, DVector<f64>)>,
}

impl Scaling {
    pub fn new(dims: &Dims, s: &DVector<f64>, z: &DVector<f64>) -> Result<Self> {
        let mut orthant = Vec::with_capacity(dims.ml);
        for i in 0..dims.ml {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return Err(Error::Solver("iterate left the orthant".into()));
            }
            orthant.push((s[i] / z[i]).sqrt());
        }
        let mut soc = Vec::with_capacity(dims.soc.len());
        for (o, len) in dims.blocks() {
            let (eta, wbar) = nt_pair(&s.rows(o, len).clone_owned(), &z.rows(o, len).clone_owned())?;
            soc.push((eta, hyperbolic_vector(wbar)));
        }
        Ok(Self { orthant, soc })
    }

    /// Scaling for `s + α·ds`, `z + α·dz`, computed from the scaled iterates
    /// `λ + α·W⁻¹ds` and `λ + α·W dz`, which stay well conditioned as the
    /// iterates approach the cone boundary.
    pub fn updated(
        &self,
        dims: &Dims,
        lam: &DVector<f64>,
        ds_scaled: &DVector<f64>,
        dz_scaled: &DVector<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let st = lam + ds_scaled * alpha;
        let zt = lam + dz_scaled * alpha;
        let mut orthant = Vec::with_capacity(dims.ml);
        for i in 0..dims.ml {
            if !(st[i] > 0.0 && zt[i] > 0.0) {
                return Err(Error::Solver("iterate left the orthant".into()));
            }
            orthant.push(self.orthant[i] * (st[i] / zt[i]).sqrt());
        }
        let mut soc = Vec::with_capacity(dims.soc.len());
        for ((o, len), (eta, v)) in dims.blocks().zip(&self.soc) {
            let (eta_t, wt) = nt_pair(&st.rows(o, len).clone_owned(), &zt.rows(o, len).clone_owned())?;
            // The old hyperbolic factor H = 2vvᵀ − J preserves the J-form,
            // so the new w̄ is H·w̃.
            let vw = v.dot(&wt);
            let mut wbar = v * (2.0 * vw);
            wbar[0] -= wt[0];
            for i in 1..len {
                wbar[i] += wt[i];
            }
            soc.push((eta * eta_t, hyperbolic_vector(wbar)));
        }
        Ok(Self { orthant, soc })
    }

    /// `W v`, or `W⁻¹ v` when `inverse`.
    pub fn apply(&self, dims: &Dims, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for i in 0..dims.ml {
            out[i] = if inverse {
                v[i] / self.orthant[i]
            } else {
                v[i] * self.orthant[i]
            };
        }
        for ((o, len), (eta, w)) in dims.blocks().zip(&self.soc) {
            let vb = v.rows(o, len);
            // W⁻¹ = (2Jv vᵀJ − J)/η
            if inverse {
                let jw_dot = w[0] * vb[0] - w.rows(1, len - 1).dot(&vb.rows(1, len - 1));
                out[o] = (2.0 * w[0] * jw_dot - vb[0]) / eta;
                for i in 1..len {
                    out[o + i] = (-2.0 * w[i] * jw_dot + vb[i]) / eta;
                }
            } else {
                let w_dot = w.dot(&vb);
                out[o] = eta * (2.0 * w[0] * w_dot - vb[0]);
                for i in 1..len {
                    out[o + i] = eta * (2.0 * w[i] * w_dot + vb[i]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims {
            ml: 3,
            soc: vec![3, 4],
        }
    }

    fn interior(rng: &mut ChaCha8Rng, d: &Dims) -> DVector<f64> {
        let mut x = DVector::from_fn(d.m(), |_, _| rng.random_range(-1.0..1.0));
        let shift = d.interior_shift(&x);
        x += d.unit() * (shift + rng.random_range(0.1..1.0));
        x
    }

    #[test]
    fn inverse_product_round_trips() {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = interior(&mut rng, &d);
        let v = DVector::from_fn(d.m(), |_, _| rng.random_range(-1.0..1.0));
        let x = d.inv_product(&l, &v);
        assert!((d.product(&l, &x) - v).norm() < 1e-12);
    }

    #[test]
    fn nt_scaling_maps_z_and_s_to_same_point() {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = interior(&mut rng, &d);
            let z = interior(&mut rng, &d);
            let w = Scaling::new(&d, &s, &z).unwrap();
            let a = w.apply(&d, &z, false);
            let b = w.apply(&d, &s, true);
            assert!((&a - &b).norm() < 1e-10 * a.norm());
            let v = DVector::from_fn(d.m(), |_, _| rng.random_range(-1.0..1.0));
            let back = w.apply(&d, &w.apply(&d, &v, false), true);
            assert!((back - &v).norm() < 1e-10);
        }
    }

    #[test]
    fn max_step_lands_on_boundary() {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = interior(&mut rng, &d);
            let dx = DVector::from_fn(d.m(), |_, _| rng.random_range(-3.0..3.0));
            let a = d.max_step(&x, &dx);
            if a.is_finite() {
                let on = &x + &dx * a;
                assert!(d.interior_shift(&on).abs() < 1e-9, "{}", d.interior_shift(&on));
                let inside = &x + &dx * (0.99 * a);
                assert!(d.interior_shift(&inside) < 0.0);
            } else {
                assert!(d.interior_shift(&(&x + &dx * 1e6)) <= 1e-6);
            }
        }
    }
}
