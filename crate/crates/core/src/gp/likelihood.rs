use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram_matrix, KernelHyper};
use crate::linalg::cholesky_with_jitter;
use crate::par::Execution;

/// Log marginal likelihood log p(Y | X, θ) and its gradient with respect to
/// the log-hyperparameters, ordered `[log σ_f², log ℓ₁ … log ℓₙ, log σ_n²]`.
///
/// The gradient uses ½·tr((ααᵀ − K⁻¹)·∂K/∂θ).
pub fn log_marginal_likelihood(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    hyper: &KernelHyper,
) -> Result<(f64, DVector<f64>)> {
    lml_with(inputs, targets, hyper, Execution::default())
}

pub(crate) fn lml_with(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    hyper: &KernelHyper,
    exec: Execution,
) -> Result<(f64, DVector<f64>)> {
    hyper.validate()?;
    let n = hyper.dim();
    check_dim("training inputs rows", n, inputs.nrows())?;
    check_dim("training targets", inputs.ncols(), targets.len())?;
    let n_pts = inputs.ncols();
    if n_pts == 0 {
        return Err(Error::InvalidInput("likelihood needs at least one point".into()));
    }

    let kf = gram_matrix(inputs, hyper, exec);
    let mut k = kf.clone();
    for i in 0..n_pts {
        k[(i, i)] += hyper.noise_variance;
    }
    let (chol, _jitter) = cholesky_with_jitter(&k)?;
    let alpha = chol.solve(targets);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let value = -0.5 * targets.dot(&alpha)
        - log_det_half
        - 0.5 * n_pts as f64 * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite log likelihood {value}")));
    }

    let kinv = chol.inverse();
    let inv_sq = hyper.inv_sq_lengthscales();
    // Per-column partial traces, reduced in column order for determinism.
    let partials: Vec<Vec<f64>> = exec.map_range(n_pts, |j| {
        let mut acc = vec![0.0; n + 2];
        let xj = inputs.column(j);
        for i in 0..n_pts {
            let a = alpha[i] * alpha[j] - kinv[(i, j)];
            let kij = kf[(i, j)];
            acc[0] += a * kij;
            let xi = inputs.column(i);
            for d in 0..n {
                let diff = xi[d] - xj[d];
                acc[1 + d] += a * kij * diff * diff * inv_sq[d];
            }
            if i == j {
                acc[n + 1] += a;
            }
        }
        acc
    });
    let mut grad = DVector::zeros(n + 2);
    for acc in partials {
        for (g, a) in grad.iter_mut().zip(acc) {
            *g += a;
        }
    }
    grad *= 0.5;
    grad[n + 1] *= hyper.noise_variance;
    Ok((value, grad))
}
