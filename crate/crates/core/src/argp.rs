//! Autoregressive GP dynamics.
//!
//! The GP regressor at step k is `[ȳ_{k−l} … ȳ_{k−1}, u_{k−m} … u_{k−1}, u_k]`:
//! the autoregressive state followed by the current input. Multistep
//! prediction feeds back posterior means only (zero-variance propagation).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArSpec {
    /// Number of past outputs l (≥ 1).
    pub output_lag: usize,
    /// Number of past inputs m.
    pub input_lag: usize,
    /// Input dimension n_u (≥ 1).
    pub input_dim: usize,
}

impl ArSpec {
    pub fn new(output_lag: usize, input_lag: usize, input_dim: usize) -> Result<Self> {
        if output_lag == 0 || input_dim == 0 {
            return Err(Error::InvalidInput(
                "output lag and input dimension must be positive".into(),
            ));
        }
        Ok(Self {
            output_lag,
            input_lag,
            input_dim,
        })
    }

    /// Length of the autoregressive state (without the current input).
    pub fn state_dim(&self) -> usize {
        self.output_lag + self.input_lag * self.input_dim
    }

    /// GP input dimension n = l + m·n_u + n_u.
    pub fn gp_dim(&self) -> usize {
        self.state_dim() + self.input_dim
    }

    /// Where each entry of the GP regressor at horizon step `k` comes from.
    pub fn regressor_sources(&self, k: usize) -> Vec<Source> {
        let mut out = Vec::with_capacity(self.gp_dim());
        for lag in (1..=self.output_lag).rev() {
            out.push(match k.checked_sub(lag) {
                Some(i) => Source::Output(i),
                None => Source::Measured,
            });
        }
        for lag in (1..=self.input_lag).rev() {
            for c in 0..self.input_dim {
                out.push(match k.checked_sub(lag) {
                    Some(i) => Source::Input(i, c),
                    None => Source::Measured,
                });
            }
        }
        for c in 0..self.input_dim {
            out.push(Source::Input(k, c));
        }
        out
    }
}

/// Origin of one regressor entry relative to the start of the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// Predicted output at horizon step i.
    Output(usize),
    /// Component c of the input at horizon step i.
    Input(usize, usize),
    /// History before the horizon; known exactly, never perturbed.
    Measured,
}

/// Autoregressive history, oldest entry first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArState {
    pub past_means: Vec<f64>,
    pub past_inputs: Vec<Vec<f64>>,
}

impl ArState {
    pub fn new(spec: &ArSpec, past_means: Vec<f64>, past_inputs: Vec<Vec<f64>>) -> Result<Self> {
        let s = Self {
            past_means,
            past_inputs,
        };
        s.check(spec)?;
        Ok(s)
    }

    /// State with every past output at `y` and every past input at `u`.
    pub fn constant(spec: &ArSpec, y: f64, u: &[f64]) -> Result<Self> {
        check_dim("input", spec.input_dim, u.len())?;
        Ok(Self {
            past_means: vec![y; spec.output_lag],
            past_inputs: vec![u.to_vec(); spec.input_lag],
        })
    }

    pub fn check(&self, spec: &ArSpec) -> Result<()> {
        check_dim("past outputs", spec.output_lag, self.past_means.len())?;
        check_dim("past inputs", spec.input_lag, self.past_inputs.len())?;
        for u in &self.past_inputs {
            check_dim("past input", spec.input_dim, u.len())?;
        }
        Ok(())
    }

    /// GP input `[state, u]`.
    pub fn regressor(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.past_means.clone();
        for p in &self.past_inputs {
            r.extend_from_slice(p);
        }
        r.extend_from_slice(u);
        r
    }

    /// Shift the history by one step, appending output `y` and input `u`.
    pub fn advance(&self, y: f64, u: &[f64]) -> Self {
        let mut past_means = self.past_means[1..].to_vec();
        past_means.push(y);
        let mut past_inputs = self.past_inputs.clone();
        if !past_inputs.is_empty() {
            past_inputs.remove(0);
            past_inputs.push(u.to_vec());
        }
        Self {
            past_means,
            past_inputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// `states[j]` is the history used at step j.
    pub states: Vec<ArState>,
}

impl Rollout {
    pub fn horizon(&self) -> usize {
        self.means.len()
    }

    pub fn std_devs(&self) -> impl Iterator<Item = f64> + '_ {
        self.variances.iter().map(|v| v.sqrt())
    }
}

/// Zero-variance multistep prediction from `init` under `inputs`.
pub fn rollout_mean(
    model: &GpModel,
    spec: &ArSpec,
    init: &ArState,
    inputs: &[Vec<f64>],
) -> Result<Rollout> {
    check_dim("GP input dimension", spec.gp_dim(), model.dim())?;
    init.check(spec)?;
    if inputs.is_empty() {
        return Err(Error::InvalidInput("rollout horizon must be ≥ 1".into()));
    }
    for u in inputs {
        check_dim("rollout input", spec.input_dim, u.len())?;
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut regressors = Vec::with_capacity(inputs.len());
    let mut means = Vec::with_capacity(inputs.len());
    let mut state = init.clone();
    for u in inputs {
        let r = state.regressor(u);
        let y = model.predict_mean(&r)?;
        let next = state.advance(y, u);
        states.push(state);
        regressors.push(r);
        means.push(y);
        state = next;
    }
    // Variances are recorded but never fed back, so they can be batched.
    let variances = model
        .predict_batch(&regressors)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    Ok(Rollout {
        means,
        variances,
        states,
    })
}

/// Displacement of the autoregressive state at each horizon step, given
/// output and input displacements. Entries that fall before the horizon
/// start are zero.
pub fn delta_state(
    spec: &ArSpec,
    output_deltas: &[f64],
    input_deltas: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let h = output_deltas.len();
    check_dim("input deltas", h, input_deltas.len())?;
    for d in input_deltas {
        check_dim("input delta", spec.input_dim, d.len())?;
    }
    let state_len = spec.state_dim();
    Ok((0..h)
        .map(|k| {
            spec.regressor_sources(k)[..state_len]
                .iter()
                .map(|s| match *s {
                    Source::Output(i) => output_deltas[i],
                    Source::Input(i, c) => input_deltas[i][c],
                    Source::Measured => 0.0,
                })
                .collect()
        })
        .collect())
}
