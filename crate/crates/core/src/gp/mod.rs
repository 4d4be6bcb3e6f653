//! Exact zero-mean GP regression with a squared-exponential kernel.
//!
//! A [`GpModel`] caches the lower Cholesky factor of K(X,X) + σ_n²I and the
//! weight vector α = (K + σ_n²I)⁻¹Y. It is immutable after construction and
//! can be shared across threads.

mod fit;
mod io;
mod likelihood;

pub use fit::{fit, FitConfig, NoiseMode};
pub use io::{read_training_csv, write_training_csv, ModelDocument};
pub use likelihood::log_marginal_likelihood;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram_matrix, se_eval, KernelHyper};
use crate::linalg::{cholesky_with_jitter, forward_solve};
use crate::par::Execution;

/// Predictive variances in [−VARIANCE_CLAMP, 0) are treated as roundoff and
/// clamped to zero; anything more negative is an error.
pub const VARIANCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    hyper: KernelHyper,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    inv_sq: Vec<f64>,
}

impl GpModel {
    /// Condition a GP with fixed hyperparameters on `inputs` (n × N, one
    /// training point per column) and `targets` (length N).
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>, hyper: KernelHyper) -> Result<Self> {
        Self::with_execution(inputs, targets, hyper, Execution::default())
    }

    pub fn with_execution(
        inputs: DMatrix<f64>,
        targets: DVector<f64>,
        hyper: KernelHyper,
        exec: Execution,
    ) -> Result<Self> {
        hyper.validate()?;
        check_dim("training inputs rows", hyper.dim(), inputs.nrows())?;
        check_dim("training targets", inputs.ncols(), targets.len())?;
        if inputs.ncols() == 0 {
            return Err(Error::InvalidInput("GP needs at least one training point".into()));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite training data".into()));
        }
        let mut k = gram_matrix(&inputs, &hyper, exec);
        for i in 0..k.nrows() {
            k[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_with_jitter(&k)?;
        let alpha = chol.solve(&targets);
        let inv_sq = hyper.inv_sq_lengthscales();
        Ok(Self {
            inputs,
            targets,
            hyper,
            chol: chol.unpack(),
            alpha,
            jitter,
            inv_sq,
        })
    }

    /// Input dimension n.
    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// Number of training points N.
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hyper(&self) -> &KernelHyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    /// Lower Cholesky factor of K + (σ_n² + jitter)·I.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Diagonal jitter that the factorization needed on top of σ_n².
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    #[inline]
    pub(crate) fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        se_eval(a, b, &self.inv_sq, self.hyper.signal_variance)
    }

    /// k(X, x): covariance between every training input and `x`.
    pub fn cross_covariance(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("GP query point", self.dim(), x.len())?;
        Ok(DVector::from_iterator(
            self.len(),
            self.inputs
                .column_iter()
                .map(|c| self.kernel(c.as_slice(), x)),
        ))
    }

    /// Posterior mean only; O(N n).
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        check_dim("GP query point", self.dim(), x.len())?;
        Ok(self
            .inputs
            .column_iter()
            .zip(self.alpha.iter())
            .map(|(c, a)| a * self.kernel(c.as_slice(), x))
            .sum())
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let mut out = self.predict_batch(std::slice::from_ref(&x.to_vec()))?;
        Ok(out.pop().expect("one prediction"))
    }

    /// Posterior mean and variance at several points with a single pass
    /// over the Cholesky factor.
    pub fn predict_batch(&self, points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        for p in points {
            check_dim("GP query point", self.dim(), p.len())?;
        }
        let m = points.len();
        let n_pts = self.len();
        let mut rhs = DMatrix::zeros(n_pts, m);
        for (j, p) in points.iter().enumerate() {
            for (i, c) in self.inputs.column_iter().enumerate() {
                rhs[(i, j)] = self.kernel(c.as_slice(), p);
            }
        }
        let means: Vec<f64> = rhs
            .column_iter()
            .map(|col| col.iter().zip(self.alpha.iter()).map(|(k, a)| a * k).sum::<f64>())
            .collect();
        forward_solve(&self.chol, &mut rhs);
        let sq: Vec<f64> = rhs.column_iter().map(|c| c.norm_squared()).collect();
        means
            .into_iter()
            .zip(sq)
            .map(|(mean, q)| {
                let var = clamp_variance(self.hyper.signal_variance - q, self.hyper.signal_variance)?;
                Ok((mean, var))
            })
            .collect()
    }
}

pub(crate) fn clamp_variance(var: f64, signal_variance: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var >= -VARIANCE_CLAMP * signal_variance.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "negative predictive variance {var:e}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, n: usize, n_pts: usize, noise: f64) -> GpModel {
        let x = DMatrix::from_fn(n, n_pts, |_, _| rng.random_range(-2.0f64..2.0));
        let y = DVector::from_fn(n_pts, |i, _| x.column(i).iter().map(|v| v.sin()).sum::<f64>());
        let ls = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let h = KernelHyper::new(rng.random_range(0.5..2.0), ls, noise).unwrap();
        GpModel::new(x, y, h).unwrap()
    }

    #[test]
    fn factor_reconstructs_and_alpha_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 2, 30, 1e-2);
        let mut k = gram_matrix(m.inputs(), m.hyper(), Execution::Sequential);
        for i in 0..30 {
            k[(i, i)] += m.hyper().noise_variance + m.jitter();
        }
        let rec = m.chol() * m.chol().transpose();
        assert!((&rec - &k).norm() <= 1e-10 * k.norm());
        let res = &k * m.alpha() - m.targets();
        assert!(res.norm() <= 1e-8 * m.targets().norm());
    }

    #[test]
    fn near_interpolation_at_training_point() {
        let x = DMatrix::from_row_slice(1, 5, &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let y = DVector::from_vec(vec![0.3, -0.2, 0.8, 0.1, -0.5]);
        let h = KernelHyper::new(1.0, vec![0.6], 1e-12).unwrap();
        let m = GpModel::new(x, y, h).unwrap();
        let (mu, var) = m.predict(&[1.0]).unwrap();
        assert_abs_diff_eq!(mu, 0.8, epsilon = 1e-6);
        assert!(var <= 1e-6);
    }

    #[test]
    fn two_point_closed_form() {
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let h = KernelHyper::new(1.0, vec![1.0], 0.1).unwrap();
        let m = GpModel::new(x, y, h).unwrap();
        // explicit 2×2 inverse
        let k01 = (-0.5f64).exp();
        let (a, b, d) = (1.1, k01, 1.1);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let ks = [(-0.125f64).exp(), (-0.125f64).exp()];
        let w = [
            ks[0] * inv[0][0] + ks[1] * inv[1][0],
            ks[0] * inv[0][1] + ks[1] * inv[1][1],
        ];
        let mean = w[0] * 1.0 + w[1] * -1.0;
        let var = 1.0 - (w[0] * ks[0] + w[1] * ks[1]);
        let (mu, v) = m.predict(&[0.5]).unwrap();
        assert_abs_diff_eq!(mu, mean, epsilon = 1e-10);
        assert_abs_diff_eq!(v, var, epsilon = 1e-10);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 1, 20, 1e-3);
        let far = 100.0 * m.hyper().lengthscales[0] + 2.0;
        let (mu, var) = m.predict(&[far]).unwrap();
        assert_abs_diff_eq!(mu, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(var, m.hyper().signal_variance, epsilon = 1e-8);
    }

    #[test]
    fn batch_matches_single_and_mean_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 3, 40, 1e-3);
        let pts: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch = m.predict_batch(&pts).unwrap();
        for (p, (mu, var)) in pts.iter().zip(batch) {
            let (mu1, var1) = m.predict(p).unwrap();
            assert_abs_diff_eq!(mu, mu1, epsilon = 1e-12);
            assert_abs_diff_eq!(var, var1, epsilon = 1e-12);
            assert_abs_diff_eq!(m.predict_mean(p).unwrap(), mu, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_training_data() {
        let h = KernelHyper::new(1.0, vec![1.0], 0.1).unwrap();
        let x = DMatrix::<f64>::zeros(1, 0);
        assert!(GpModel::new(x, DVector::zeros(0), h.clone()).is_err());
        let x = DMatrix::from_row_slice(1, 2, &[0.0, f64::NAN]);
        assert!(GpModel::new(x, DVector::zeros(2), h.clone()).is_err());
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            GpModel::new(x, DVector::zeros(1), h),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn variance_clamp_policy() {
        assert_eq!(clamp_variance(-5e-13, 1.0).unwrap(), 0.0);
        assert_eq!(clamp_variance(0.25, 1.0).unwrap(), 0.25);
        assert!(matches!(clamp_variance(-1e-6, 1.0), Err(Error::Numerical(_))));
    }
}
