//! Squared-exponential (ARD) covariance function and its derivatives.
//!
//! k(x, x') = σ_f² · exp(−½ Σᵢ (xᵢ − x'ᵢ)² / ℓᵢ²)

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::par::Execution;

/// Kernel hyperparameters: signal variance σ_f², one lengthscale per input
/// dimension, and observation noise variance σ_n².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelHyper {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let h = Self {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidInput("no lengthscales".into()));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(**l > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// 1/ℓᵢ², cached by hot loops.
    pub fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Kernel value with precomputed 1/ℓ², no dimension checks.
#[inline]
pub(crate) fn se_eval(x: &[f64], xp: &[f64], inv_sq: &[f64], signal_variance: f64) -> f64 {
    let mut r2 = 0.0;
    for ((a, b), w) in x.iter().zip(xp).zip(inv_sq) {
        let d = a - b;
        r2 += d * d * w;
    }
    signal_variance * (-0.5 * r2).exp()
}

pub fn se_kernel(x: &[f64], x_prime: &[f64], hyper: &KernelHyper) -> Result<f64> {
    check_dim("se_kernel x", hyper.dim(), x.len())?;
    check_dim("se_kernel x'", hyper.dim(), x_prime.len())?;
    Ok(se_eval(
        x,
        x_prime,
        &hyper.inv_sq_lengthscales(),
        hyper.signal_variance,
    ))
}

/// First and mixed second derivatives of the kernel.
#[derive(Clone, Debug)]
pub struct KernelDerivatives {
    /// ∂k/∂x
    pub k10: DVector<f64>,
    /// ∂k/∂x'
    pub k01: DVector<f64>,
    /// ∂²k/∂xᵢ∂x'ⱼ
    pub k11: DMatrix<f64>,
}

pub fn se_kernel_derivatives(
    x: &[f64],
    x_prime: &[f64],
    hyper: &KernelHyper,
) -> Result<KernelDerivatives> {
    let n = hyper.dim();
    check_dim("se_kernel_derivatives x", n, x.len())?;
    check_dim("se_kernel_derivatives x'", n, x_prime.len())?;
    let inv_sq = hyper.inv_sq_lengthscales();
    let k = se_eval(x, x_prime, &inv_sq, hyper.signal_variance);
    // scaled offsets (xᵢ − x'ᵢ)/ℓᵢ²
    let u: Vec<f64> = (0..n).map(|i| (x[i] - x_prime[i]) * inv_sq[i]).collect();
    let k10 = DVector::from_iterator(n, u.iter().map(|ui| -ui * k));
    let k01 = -&k10;
    let k11 = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { inv_sq[i] } else { 0.0 };
        (diag - u[i] * u[j]) * k
    });
    Ok(KernelDerivatives { k10, k01, k11 })
}

/// Gram matrix K(X, X) for column-stored inputs (n × N), without noise.
pub fn gram_matrix(inputs: &DMatrix<f64>, hyper: &KernelHyper, exec: Execution) -> DMatrix<f64> {
    let n_pts = inputs.ncols();
    let inv_sq = hyper.inv_sq_lengthscales();
    let sf2 = hyper.signal_variance;
    let mut k = DMatrix::<f64>::zeros(n_pts, n_pts);
    // column-major: each chunk of length n_pts is one column
    exec.for_each_chunk_mut(k.as_mut_slice(), n_pts.max(1), |j, col| {
        let xj = inputs.column(j);
        let xj = xj.as_slice();
        for (i, v) in col.iter_mut().enumerate() {
            *v = se_eval(inputs.column(i).as_slice(), xj, &inv_sq, sf2);
        }
    });
    k
}
