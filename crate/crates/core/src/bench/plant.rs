use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::argp::ArSpec;
use crate::error::{Error, Result};
use crate::gp::{fit, FitConfig, GpModel};
use crate::par::Execution;

/// Output noise standard deviation.
pub const NOISE_STD: f64 = 0.025;

/// Hyperparameters are fitted on at most this many points.
const FIT_POINTS: usize = 300;

/// Plant state plus its private noise stream.
#[derive(Clone, Debug)]
pub struct PlantState {
    pub x: f64,
    rng: ChaCha8Rng,
}

impl PlantState {
    pub fn new(x0: f64, seed: u64) -> Self {
        Self {
            x: x0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Measure the current state (adds noise when `noise_on`).
    pub fn measure(&mut self, noise_on: bool) -> f64 {
        if noise_on {
            let w = Normal::new(0.0, NOISE_STD).expect("valid normal");
            self.x + w.sample(&mut self.rng)
        } else {
            self.x
        }
    }
}

pub fn plant_dynamics(x: f64, u: f64) -> f64 {
    x - 0.5 * (x + u * u * u).tanh()
}

/// Apply `u`, advance the state and return the new measurement.
pub fn plant_step(state: &mut PlantState, u: f64, noise_on: bool) -> f64 {
    state.x = plant_dynamics(state.x, u);
    state.measure(noise_on)
}

/// AR structure of the plant model: one past output, no past inputs, one
/// input.
pub fn plant_ar_spec() -> ArSpec {
    ArSpec {
        output_lag: 1,
        input_lag: 0,
        input_dim: 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Steps each random input level is held.
    pub hold: usize,
    pub noise: bool,
    pub x0: f64,
    pub input_min: f64,
    pub input_max: f64,
    pub rate_max: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            hold: 3,
            noise: true,
            x0: 0.0,
            input_min: -1.0,
            input_max: 1.0,
            rate_max: 0.5,
        }
    }
}

/// Training set of `n` rows `(y_{k−1}, u_k) → y_k` from the noisy plant.
pub fn generate_training_data(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    generate_training_data_with(n, seed, &DataConfig::default())
}

pub fn generate_training_data_with(
    n: usize,
    seed: u64,
    config: &DataConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plant = PlantState::new(config.x0, seed.wrapping_add(0x9e37_79b9));
    let hold = config.hold.max(1);
    let mut x = DMatrix::zeros(2, n);
    let mut y = DVector::zeros(n);
    let mut y_prev = plant.measure(config.noise);
    let mut u_prev = 0.0;
    let mut level = 0.0;
    for k in 0..n {
        if k % hold == 0 {
            level = rng.random_range(config.input_min..=config.input_max);
        }
        let u = level.clamp(u_prev - config.rate_max, u_prev + config.rate_max);
        let yk = plant_step(&mut plant, u, config.noise);
        x[(0, k)] = y_prev;
        x[(1, k)] = u;
        y[k] = yk;
        y_prev = yk;
        u_prev = u;
    }
    (x, y)
}

/// Fit a GP to plant data; hyperparameters come from the first few hundred
/// points, the model conditions on all of them.
pub fn train_model(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    seed: u64,
    execution: Execution,
) -> Result<GpModel> {
    if inputs.ncols() == 0 {
        return Err(Error::InvalidInput("no training data".into()));
    }
    let config = FitConfig {
        starts: 3,
        seed,
        max_points: Some(FIT_POINTS),
        execution,
        ..Default::default()
    };
    fit(inputs, targets, &config)
}
