//! Hyperparameter fitting by multi-start projected BFGS ascent on the log
//! marginal likelihood, in log-hyperparameter space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::likelihood::lml_with;
use super::GpModel;
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelHyper;
use crate::par::Execution;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMode {
    /// Fit σ_n² together with the kernel parameters.
    Fit,
    /// Hold σ_n² at the given value.
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub starts: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub noise: NoiseMode,
    /// Fit hyperparameters on at most this many leading points; the final
    /// model is still conditioned on all data.
    pub max_points: Option<usize>,
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0,
            max_iters: 200,
            noise: NoiseMode::Fit,
            max_points: None,
            execution: Execution::default(),
        }
    }
}

/// Box on θ = [log σ_f², log ℓ₁ … log ℓₙ, log σ_n²].
struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn new(inputs: &DMatrix<f64>) -> Self {
        let n = inputs.nrows();
        let mut lo = vec![-10.0];
        let mut hi = vec![10.0];
        for d in 0..n {
            let row = inputs.row(d);
            let range = row.max() - row.min();
            let log_range = if range > 0.0 { range.ln() } else { 0.0 };
            lo.push(log_range - 5.0);
            hi.push(log_range + 5.0);
        }
        lo.push(-12.0);
        hi.push(2.0);
        Self { lo, hi }
    }

    fn project(&self, theta: &mut [f64], free: &[bool]) {
        for (i, t) in theta.iter_mut().enumerate() {
            if free[i] {
                *t = t.clamp(self.lo[i], self.hi[i]);
            }
        }
    }
}

fn theta_to_hyper(theta: &[f64]) -> KernelHyper {
    let n = theta.len() - 2;
    KernelHyper {
        signal_variance: theta[0].exp(),
        lengthscales: theta[1..=n].iter().map(|t| t.exp()).collect(),
        noise_variance: theta[n + 1].exp(),
    }
}

/// Fit hyperparameters and return the conditioned model.
pub fn fit(inputs: &DMatrix<f64>, targets: &DVector<f64>, config: &FitConfig) -> Result<GpModel> {
    let n = inputs.nrows();
    let n_pts = inputs.ncols();
    check_dim("training targets", n_pts, targets.len())?;
    if n == 0 || n_pts == 0 {
        return Err(Error::InvalidInput("fit needs n ≥ 1 and N ≥ 1".into()));
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    let used = config.max_points.map_or(n_pts, |m| m.clamp(1, n_pts));
    let fit_x = inputs.columns(0, used).into_owned();
    let fit_y = targets.rows(0, used).into_owned();

    let bounds = Bounds::new(&fit_x);
    let mut free = vec![true; n + 2];
    if let NoiseMode::Fixed(v) = config.noise {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("fixed noise variance {v}")));
        }
        free[n + 1] = false;
    }
    let starts = initial_points(&fit_x, &fit_y, &bounds, &free, config);
    let exec = config.execution;
    // Parallel over starts; each start evaluates its likelihood sequentially.
    let results: Vec<Option<(f64, Vec<f64>)>> = exec.map_slice(&starts, |t0| {
        ascend(&fit_x, &fit_y, t0.clone(), &bounds, &free, config.max_iters)
    });
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (val, theta) in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, theta));
        }
    }
    let (val, theta) = best.ok_or_else(|| Error::Fit("no start produced a finite likelihood".into()))?;
    let mut hyper = theta_to_hyper(&theta);
    if let NoiseMode::Fixed(v) = config.noise {
        hyper.noise_variance = v;
    }
    log::debug!("fit: best lml {val:.4} hyper {hyper:?}");
    GpModel::with_execution(inputs.clone(), targets.clone(), hyper, exec)
}

fn initial_points(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    bounds: &Bounds,
    free: &[bool],
    config: &FitConfig,
) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let var_y = {
        let m = y.mean();
        let v = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64;
        if v > 1e-12 { v } else { 1.0 }
    };
    let noise0 = match config.noise {
        NoiseMode::Fixed(v) => v.max(1e-300).ln(),
        NoiseMode::Fit => (0.01 * var_y).ln(),
    };
    let mut first = vec![var_y.ln()];
    for d in 0..n {
        // midpoint of the box is log(range)
        first.push(0.5 * (bounds.lo[1 + d] + bounds.hi[1 + d]) - 2f64.ln());
    }
    first.push(noise0);
    let mut out = vec![first];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 1..config.starts.max(1) {
        let mut t = vec![var_y.ln() + rng.random_range(-2.0..2.0)];
        for d in 0..n {
            let mid = 0.5 * (bounds.lo[1 + d] + bounds.hi[1 + d]);
            t.push(mid + rng.random_range(-3.0..1.0));
        }
        t.push(match config.noise {
            NoiseMode::Fixed(_) => noise0,
            NoiseMode::Fit => rng.random_range(-10.0..-1.0),
        });
        out.push(t);
    }
    for t in &mut out {
        bounds.project(t, free);
    }
    out
}

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let h = theta_to_hyper(theta);
    match lml_with(x, y, &h, Execution::Sequential) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|g| g.is_finite()) => {
            Some((-v, g.iter().map(|g| -g).collect()))
        }
        _ => None,
    }
}

/// Projected BFGS minimisation of −LML. Returns (LML, θ) or `None` if the
/// start itself is not evaluable.
fn ascend(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mut theta: Vec<f64>,
    bounds: &Bounds,
    free: &[bool],
    max_iters: usize,
) -> Option<(f64, Vec<f64>)> {
    let p = theta.len();
    let (mut f, mut g) = objective(x, y, &theta)?;
    let mut hinv = DMatrix::<f64>::identity(p, p);
    for _ in 0..max_iters {
        // freeze coordinates sitting on a bound with the gradient pushing out
        let active: Vec<bool> = (0..p)
            .map(|i| {
                free[i]
                    && !((theta[i] <= bounds.lo[i] && g[i] > 0.0)
                        || (theta[i] >= bounds.hi[i] && g[i] < 0.0))
            })
            .collect();
        let pg: f64 = (0..p)
            .filter(|&i| active[i])
            .map(|i| g[i] * g[i])
            .sum::<f64>()
            .sqrt();
        if pg < 1e-6 {
            break;
        }
        let gv = DVector::from_iterator(p, (0..p).map(|i| if active[i] { g[i] } else { 0.0 }));
        let mut dir = -(&hinv * &gv);
        for i in 0..p {
            if !active[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&gv) >= 0.0 {
            dir = -gv.clone();
            hinv.fill_with_identity();
        }
        // cap the step at 2 log-units per coordinate
        let max_abs = dir.amax();
        if max_abs > 2.0 {
            dir *= 2.0 / max_abs;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = (0..p).map(|i| theta[i] + step * dir[i]).collect();
            bounds.project(&mut trial, free);
            let decrease: f64 = (0..p).map(|i| g[i] * (trial[i] - theta[i])).sum();
            if let Some((ft, gt)) = objective(x, y, &trial) {
                if ft <= f + 1e-4 * decrease {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else { break };
        let s = DVector::from_iterator(p, (0..p).map(|i| trial[i] - theta[i]));
        let yv = DVector::from_iterator(p, (0..p).map(|i| gt[i] - g[i]));
        let sy = s.dot(&yv);
        let rel_change = (f - ft).abs() / f.abs().max(1.0);
        theta = trial;
        f = ft;
        g = gt;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i_p = DMatrix::<f64>::identity(p, p);
            let a = &i_p - rho * &s * yv.transpose();
            let b = &i_p - rho * &yv * s.transpose();
            hinv = &a * &hinv * &b + rho * &s * s.transpose();
        }
        if rel_change < 1e-10 {
            break;
        }
    }
    Some((-f, theta))
}
