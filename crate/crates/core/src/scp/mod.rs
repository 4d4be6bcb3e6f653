//! Tracking MPC on an autoregressive GP, solved by trust-region sequential
//! convex programming over linearized GPs.
//!
//! The nonconvex problem is handled through its exact penalty
//!
//! ```text
//! φ = J + λ · Σ max(0, g_i)
//! ```
//!
//! where J is the tracking cost and the g_i are the κσ-tightened output band
//! and terminal constraints. Input bounds and rate limits are kept hard.

mod solver;
mod subproblem;

use serde::{Deserialize, Serialize};

use crate::argp::Rollout;
use crate::conic::ConicSettings;
use crate::error::{check_dim, Error, Result};
use crate::par::Execution;

pub use solver::{
    project_inputs, scp_solve, IterationRecord, MpcProblem, ScpReport, Termination,
};
pub use subproblem::{build_subproblem, predicted_cost, Layout, Nominal, Subproblem};

/// Quadratic tracking objective with an output band and a terminal band.
///
/// Input bounds and rate limits apply to every input component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingMpcSpec {
    pub horizon: usize,
    /// Q on (ȳ_k − r)².
    pub weight_output: f64,
    /// R on ‖u_k − u_{k−1}‖².
    pub weight_input_rate: f64,
    /// S on σ_k².
    pub weight_variance: f64,
    pub input_min: f64,
    pub input_max: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub output_min: f64,
    pub output_max: f64,
    /// Confidence multiplier κ on σ in the band and terminal constraints.
    pub kappa: f64,
    /// Half-width δ of the terminal band around the reference.
    pub terminal_halfwidth: f64,
    /// Reference, held over the whole horizon.
    pub reference: f64,
}

impl Default for TrackingMpcSpec {
    fn default() -> Self {
        Self {
            horizon: 12,
            weight_output: 10.0,
            weight_input_rate: 0.1,
            weight_variance: 0.0,
            input_min: -1.0,
            input_max: 1.0,
            rate_min: -0.5,
            rate_max: 0.5,
            output_min: -1.2,
            output_max: 1.2,
            kappa: 2.0,
            terminal_halfwidth: 0.075,
            reference: 0.0,
        }
    }
}

impl TrackingMpcSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("tracking spec: {m}")));
        let all = [
            self.weight_output,
            self.weight_input_rate,
            self.weight_variance,
            self.input_min,
            self.input_max,
            self.rate_min,
            self.rate_max,
            self.output_min,
            self.output_max,
            self.kappa,
            self.terminal_halfwidth,
            self.reference,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all fields must be finite");
        }
        if self.horizon == 0 {
            return bad("horizon must be ≥ 1");
        }
        if self.weight_output < 0.0 || self.weight_input_rate < 0.0 || self.weight_variance < 0.0 {
            return bad("weights must be non-negative");
        }
        if self.input_min > self.input_max || self.output_min > self.output_max {
            return bad("bounds out of order");
        }
        // The sequential projection onto the input set needs 0 inside the
        // rate interval so a feasible next input always exists.
        if !(self.rate_min <= 0.0 && 0.0 <= self.rate_max) {
            return bad("rate limits must bracket zero");
        }
        if self.kappa < 0.0 {
            return bad("kappa must be non-negative");
        }
        if self.terminal_halfwidth <= 0.0 {
            return bad("terminal half-width must be positive");
        }
        Ok(())
    }
}

/// Tuning of the outer loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScpConfig {
    /// Initial trust-region radius.
    pub rho0: f64,
    /// Penalty weight λ.
    pub lambda: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub beta_fail: f64,
    pub beta_succ: f64,
    /// Stop once the predicted reduction is at most this.
    pub epsilon: f64,
    /// Added to `epsilon` in proportion to |φ|, so that interior-point
    /// round-off on heavily penalized costs reads as convergence.
    pub epsilon_rel: f64,
    pub j_max: usize,
    /// Factor applied to λ when a converged solution still violates the
    /// soft constraints.
    pub lambda_growth: f64,
    pub lambda_max: f64,
    pub max_lambda_increases: usize,
    /// Terminate unconverged once ρ falls below this.
    pub rho_min: f64,
    /// Start every MPC step from `rho0` rather than the last radius.
    pub reset_rho: bool,
    /// Hinge total above which the penalty is considered too weak.
    pub violation_tol: f64,
    pub conic: ConicSettings,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            rho0: 0.5,
            lambda: 1e3,
            r0: 0.01,
            r1: 0.25,
            r2: 0.7,
            beta_fail: 0.5,
            beta_succ: 2.0,
            epsilon: 1e-4,
            epsilon_rel: 1e-8,
            j_max: 30,
            lambda_growth: 10.0,
            lambda_max: 1e7,
            max_lambda_increases: 3,
            rho_min: 1e-6,
            reset_rho: true,
            violation_tol: 1e-6,
            conic: ConicSettings::default(),
            execution: Execution::default(),
        }
    }
}

impl ScpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("scp config: {m}")));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad("rho0 must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(0.0 < self.r0 && self.r0 < self.r1 && self.r1 < self.r2 && self.r2 < 1.0) {
            return bad("thresholds must satisfy 0 < r0 < r1 < r2 < 1");
        }
        if !(0.0 < self.beta_fail && self.beta_fail < 1.0) {
            return bad("beta_fail must lie in (0, 1)");
        }
        if !(self.beta_succ > 1.0 && self.beta_succ.is_finite()) {
            return bad("beta_succ must exceed 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.epsilon_rel >= 0.0 && self.epsilon_rel < 1e-3) {
            return bad("epsilon_rel must lie in [0, 1e-3)");
        }
        if self.j_max == 0 {
            return bad("j_max must be positive");
        }
        if !(self.lambda_growth >= 1.0 && self.lambda_max >= self.lambda) {
            return bad("lambda growth must be ≥ 1 and lambda_max ≥ lambda");
        }
        if !(self.rho_min >= 0.0 && self.violation_tol >= 0.0) {
            return bad("rho_min and violation_tol must be non-negative");
        }
        Ok(())
    }

    /// Trust-region factor for ratio `r`, and whether the step is kept.
    /// Stop threshold on the predicted reduction at cost `phi`.
    pub fn stop_tolerance(&self, phi: f64) -> f64 {
        self.epsilon + self.epsilon_rel * phi.abs()
    }

    pub fn ratio_rule(&self, r: f64) -> (f64, bool) {
        if r < self.r0 {
            (self.beta_fail, false)
        } else if r < self.r1 {
            (self.beta_fail, true)
        } else if r < self.r2 {
            (1.0, true)
        } else {
            (self.beta_succ, true)
        }
    }
}

/// The parts of φ, before weighting the violation by λ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub rate: f64,
    pub variance: f64,
    /// Sum of the hinge violations of the band and terminal constraints.
    pub violation: f64,
}

impl CostBreakdown {
    pub fn objective(&self) -> f64 {
        self.tracking + self.rate + self.variance
    }

    pub fn penalized(&self, lambda: f64) -> f64 {
        self.objective() + lambda * self.violation
    }
}

/// Cost terms for predicted `means`/`variances` under `inputs`, with
/// `previous_input` the last applied input.
pub fn cost_terms(
    spec: &TrackingMpcSpec,
    means: &[f64],
    variances: &[f64],
    inputs: &[Vec<f64>],
    previous_input: &[f64],
) -> Result<CostBreakdown> {
    let h = spec.horizon;
    check_dim("predicted means", h, means.len())?;
    check_dim("predicted variances", h, variances.len())?;
    check_dim("horizon inputs", h, inputs.len())?;
    let mut out = CostBreakdown::default();
    let mut prev = previous_input;
    for k in 0..h {
        check_dim("input", previous_input.len(), inputs[k].len())?;
        let (y, var) = (means[k], variances[k].max(0.0));
        let sigma = var.sqrt();
        out.tracking += spec.weight_output * (y - spec.reference).powi(2);
        out.rate += spec.weight_input_rate
            * inputs[k]
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        out.variance += spec.weight_variance * var;
        let ks = spec.kappa * sigma;
        out.violation += (spec.output_min - (y - ks)).max(0.0) + (y + ks - spec.output_max).max(0.0);
        if k + 1 == h {
            let e = y - spec.reference;
            let d = spec.terminal_halfwidth;
            out.violation += (-d - (e - ks)).max(0.0) + (e + ks - d).max(0.0);
        }
        prev = &inputs[k];
    }
    Ok(out)
}

/// Exact penalized cost φ of a GP rollout.
pub fn penalty_cost(
    spec: &TrackingMpcSpec,
    rollout: &Rollout,
    inputs: &[Vec<f64>],
    previous_input: &[f64],
    lambda: f64,
) -> Result<f64> {
    Ok(cost_terms(spec, &rollout.means, &rollout.variances, inputs, previous_input)?
        .penalized(lambda))
}
