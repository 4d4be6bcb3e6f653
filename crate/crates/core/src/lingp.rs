//! Linearized GP: the posterior of `[f(x), ∇f(x)]` at a point.
//!
//! Linearizing the latent function before prediction gives a predictor at
//! `x + Δ` whose mean `m̂ᵀ[1; Δ]` is affine in Δ and whose variance
//! `[1; Δ]ᵀ V̂ [1; Δ]` is a convex quadratic, non-negative for every Δ.
//! Dimensions held fixed are dropped from the expansion through an
//! `active_mask`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::linalg::forward_solve;
use crate::par::Execution;

/// Eigenvalues of V̂ below this are treated as a broken derivative kernel
/// rather than roundoff.
pub const EIGEN_FLOOR_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LinGp {
    center: Vec<f64>,
    active: Vec<usize>,
    m_hat: DVector<f64>,
    v_hat: DMatrix<f64>,
    v_sqrt: DMatrix<f64>,
}

impl LinGp {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Indices of the input dimensions the displacement Δ ranges over.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Posterior mean of `[f(x), ∂f/∂x_a for a in active]`.
    pub fn m_hat(&self) -> &DVector<f64> {
        &self.m_hat
    }

    pub fn v_hat(&self) -> &DMatrix<f64> {
        &self.v_hat
    }

    /// Square-root factor S with SᵀS = V̂.
    pub fn v_sqrt(&self) -> &DMatrix<f64> {
        &self.v_sqrt
    }

    /// Length of the displacement vector this linearization accepts.
    pub fn delta_dim(&self) -> usize {
        self.active.len()
    }

    /// Mean and variance of the linearized process at `center + Δ`.
    pub fn eval(&self, delta: &[f64]) -> Result<(f64, f64)> {
        check_dim("linGP displacement", self.delta_dim(), delta.len())?;
        let mut mean = self.m_hat[0];
        for (m, d) in self.m_hat.iter().skip(1).zip(delta) {
            mean += m * d;
        }
        let mut var = 0.0;
        for r in 0..self.v_sqrt.nrows() {
            let mut s = self.v_sqrt[(r, 0)];
            for (c, d) in delta.iter().enumerate() {
                s += self.v_sqrt[(r, c + 1)] * d;
            }
            var += s * s;
        }
        Ok((mean, var))
    }
}

/// Linearize `model` at `x`; `active_mask[d]` marks dimension `d` as free.
pub fn lingp_build(model: &GpModel, x: &[f64], active_mask: &[bool]) -> Result<LinGp> {
    let mut out = lingp_build_batch(
        model,
        &[(x.to_vec(), active_mask.to_vec())],
        Execution::Sequential,
    )?;
    Ok(out.pop().expect("one linearization"))
}

/// Linearize at several points with one pass over the Cholesky factor.
pub fn lingp_build_batch(
    model: &GpModel,
    points: &[(Vec<f64>, Vec<bool>)],
    exec: Execution,
) -> Result<Vec<LinGp>> {
    let n = model.dim();
    let mut offsets = Vec::with_capacity(points.len() + 1);
    let mut actives = Vec::with_capacity(points.len());
    offsets.push(0);
    for (x, mask) in points {
        check_dim("linGP center", n, x.len())?;
        check_dim("linGP active mask", n, mask.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite linGP center".into()));
        }
        let active: Vec<usize> = (0..n).filter(|&d| mask[d]).collect();
        offsets.push(offsets.last().unwrap() + 1 + active.len());
        actives.push(active);
    }
    let m = *offsets.last().unwrap();
    let n_pts = model.len();
    let inv_sq = model.hyper().inv_sq_lengthscales();
    let sf2 = model.hyper().signal_variance;

    // B = [k(X,x), K⁽⁰¹⁾(X,x)[:, active]] for every point, N × m.
    let mut rhs = DMatrix::<f64>::zeros(n_pts, m);
    let inputs = model.inputs();
    exec.for_each_chunk_mut(rhs.as_mut_slice(), n_pts.max(1), |col, out| {
        let p = offsets.partition_point(|&o| o <= col) - 1;
        let x = &points[p].0;
        let a = col - offsets[p];
        for (i, v) in out.iter_mut().enumerate() {
            let xi = inputs.column(i);
            let xi = xi.as_slice();
            let k = model.kernel(xi, x);
            *v = if a == 0 {
                k
            } else {
                let d = actives[p][a - 1];
                (xi[d] - x[d]) * inv_sq[d] * k
            };
        }
    });

    let alpha = model.alpha();
    let m_hat_all: Vec<f64> = rhs
        .column_iter()
        .map(|c| c.iter().zip(alpha.iter()).map(|(b, a)| a * b).sum::<f64>())
        .collect();
    forward_solve(model.chol(), &mut rhs);

    let rhs = &rhs;
    let m_hat_all = &m_hat_all;
    let results: Vec<Result<LinGp>> = exec.map_range(points.len(), |p| {
        let base = offsets[p];
        let dim = 1 + actives[p].len();
        let mut v = DMatrix::<f64>::zeros(dim, dim);
        v[(0, 0)] = sf2;
        for (a, &d) in actives[p].iter().enumerate() {
            v[(a + 1, a + 1)] = sf2 * inv_sq[d];
        }
        let w = rhs.columns(base, dim);
        v.gemm_tr(-1.0, &w, &w, 1.0);
        let m_hat = DVector::from_column_slice(&m_hat_all[base..base + dim]);
        finish(points[p].0.clone(), actives[p].clone(), m_hat, v)
    });
    results.into_iter().collect()
}

/// Symmetrize, floor eigenvalues at zero and factor.
fn finish(center: Vec<f64>, active: Vec<usize>, m_hat: DVector<f64>, v: DMatrix<f64>) -> Result<LinGp> {
    let sym = (&v + v.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -EIGEN_FLOOR_TOL {
        return Err(Error::Numerical(format!(
            "linGP covariance has eigenvalue {min:e}"
        )));
    }
    let lam = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    // S = diag(√λ) Qᵀ  ⇒  SᵀS = Q diag(λ) Qᵀ
    let mut v_sqrt = q.transpose();
    for (r, l) in lam.iter().enumerate() {
        let s = l.sqrt();
        v_sqrt.row_mut(r).scale_mut(s);
    }
    let v_hat = v_sqrt.transpose() * &v_sqrt;
    Ok(LinGp {
        center,
        active,
        m_hat,
        v_hat,
        v_sqrt,
    })
}
