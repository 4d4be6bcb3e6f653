//! The trust-region outer loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::subproblem::{build_subproblem, predicted_cost, Nominal};
use super::{cost_terms, CostBreakdown, ScpConfig, TrackingMpcSpec};
use crate::argp::{rollout_mean, ArSpec, ArState, Rollout, Source};
use crate::conic::{self, SolveStatus};
use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::lingp::{lingp_build_batch, LinGp};

/// Largest constraint violation tolerated from a solve that hit the
/// iteration cap.
const MAX_ITER_VIOLATION: f64 = 1e-6;

/// One MPC problem: model, objective and the measured history.
#[derive(Clone, Copy, Debug)]
pub struct MpcProblem<'a> {
    pub model: &'a GpModel,
    pub spec: &'a TrackingMpcSpec,
    pub arspec: &'a ArSpec,
    pub init: &'a ArState,
    /// Last applied input.
    pub previous_input: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Penalty pass; λ is constant within a pass.
    pub pass: usize,
    pub lambda: f64,
    /// φ at the current iterate, before this iteration.
    pub phi: f64,
    pub delta_actual: f64,
    pub delta_predicted: f64,
    /// None on the iteration where the stop test fired.
    pub ratio: Option<f64>,
    /// Trust-region radius used in this iteration.
    pub rho: f64,
    pub accepted: bool,
    /// Seconds spent in the conic solver.
    pub subproblem_time: f64,
    pub linearize_time: f64,
    pub rollout_time: f64,
    pub conic_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The predicted reduction fell below ε.
    Converged,
    IterationLimit,
    /// ρ shrank below `rho_min`.
    TrustRegionFloor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScpReport {
    pub iterations: Vec<IterationRecord>,
    pub inputs: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// φ of the returned inputs under the final λ.
    pub phi: f64,
    pub cost: CostBreakdown,
    pub lambda: f64,
    /// Radius after the last iteration.
    pub rho: f64,
    pub converged: bool,
    pub termination: Termination,
}

impl ScpReport {
    pub fn total_subproblem_time(&self) -> f64 {
        self.iterations.iter().map(|r| r.subproblem_time).sum()
    }
}

/// Project a plan onto the input set by clamping each step in turn to the
/// input bounds intersected with the rate window around its predecessor.
pub fn project_inputs(
    spec: &TrackingMpcSpec,
    previous_input: &[f64],
    inputs: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut prev = previous_input.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for u in inputs {
        let v: Vec<f64> = u
            .iter()
            .zip(&prev)
            .map(|(&x, &p)| {
                let lo = spec.input_min.max(p + spec.rate_min);
                let hi = spec.input_max.min(p + spec.rate_max);
                // an out-of-bounds predecessor can make the window empty
                if lo > hi {
                    p.clamp(spec.input_min, spec.input_max)
                } else {
                    x.clamp(lo, hi)
                }
            })
            .collect();
        prev.clone_from(&v);
        out.push(v);
    }
    out
}

fn linearize(
    problem: &MpcProblem,
    rollout: &Rollout,
    inputs: &[Vec<f64>],
    config: &ScpConfig,
) -> Result<Vec<LinGp>> {
    let points: Vec<(Vec<f64>, Vec<bool>)> = (0..inputs.len())
        .map(|k| {
            let x = rollout.states[k].regressor(&inputs[k]);
            let mask = problem
                .arspec
                .regressor_sources(k)
                .iter()
                .map(|s| *s != Source::Measured)
                .collect();
            (x, mask)
        })
        .collect();
    lingp_build_batch(problem.model, &points, config.execution)
}

struct Iterate {
    inputs: Vec<Vec<f64>>,
    rollout: Rollout,
    cost: CostBreakdown,
}

struct PassOutcome {
    current: Iterate,
    rho: f64,
    termination: Termination,
}

fn evaluate(problem: &MpcProblem, inputs: Vec<Vec<f64>>) -> Result<Iterate> {
    let rollout = rollout_mean(problem.model, problem.arspec, problem.init, &inputs)?;
    let cost = cost_terms(
        problem.spec,
        &rollout.means,
        &rollout.variances,
        &inputs,
        problem.previous_input,
    )?;
    Ok(Iterate {
        inputs,
        rollout,
        cost,
    })
}

fn run_pass(
    problem: &MpcProblem,
    mut current: Iterate,
    lambda: f64,
    pass: usize,
    config: &ScpConfig,
    trace: &mut Vec<IterationRecord>,
) -> Result<PassOutcome> {
    let spec = problem.spec;
    let mut rho = config.rho0;
    let mut phi = current.cost.penalized(lambda);
    for _ in 0..config.j_max {
        let t = Instant::now();
        let lingps = linearize(problem, &current.rollout, &current.inputs, config)?;
        let linearize_time = t.elapsed().as_secs_f64();

        let nominal = Nominal {
            rollout: &current.rollout,
            inputs: &current.inputs,
            previous_input: problem.previous_input,
        };
        let sub = build_subproblem(spec, problem.arspec, &lingps, &nominal, rho, lambda)?;
        let t = Instant::now();
        let sol = conic::solve(&sub.program, &config.conic)?;
        let subproblem_time = t.elapsed().as_secs_f64();
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::MaxIter if sub.program.max_violation(&sol.z) <= MAX_ITER_VIOLATION => {
                log::warn!("subproblem hit the iteration cap; using its best iterate");
            }
            status => {
                return Err(Error::Solver(format!(
                    "subproblem ended with status {status:?} (residuals {:?})",
                    sol.residuals
                )))
            }
        }

        // Solver tolerances can leave the inputs marginally outside U.
        let raw = sub.input_deltas(&sol.z);
        let stepped: Vec<Vec<f64>> = current
            .inputs
            .iter()
            .zip(&raw)
            .map(|(u, d)| u.iter().zip(d).map(|(a, b)| a + b).collect())
            .collect();
        let candidate = project_inputs(spec, problem.previous_input, &stepped);
        let deltas: Vec<Vec<f64>> = candidate
            .iter()
            .zip(&current.inputs)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let predicted = predicted_cost(
            spec,
            problem.arspec,
            &lingps,
            &nominal,
            &deltas,
            &sub.output_deltas(&sol.z),
        )?
        .penalized(lambda);

        let t = Instant::now();
        let next = evaluate(problem, candidate)?;
        let rollout_time = t.elapsed().as_secs_f64();
        let phi_next = next.cost.penalized(lambda);

        let delta_actual = phi - phi_next;
        let delta_predicted = phi - predicted;
        let mut record = IterationRecord {
            pass,
            lambda,
            phi,
            delta_actual,
            delta_predicted,
            ratio: None,
            rho,
            accepted: false,
            subproblem_time,
            linearize_time,
            rollout_time,
            conic_iterations: sol.iterations,
        };
        if delta_predicted.abs() <= config.stop_tolerance(phi) {
            trace.push(record);
            return Ok(PassOutcome {
                current,
                rho,
                termination: Termination::Converged,
            });
        }
        if delta_predicted < 0.0 {
            // zero deltas are feasible, so the subproblem cannot predict an
            // increase beyond solver tolerance
            return Err(Error::Numerical(format!(
                "subproblem predicted a cost increase of {:e} at phi {:e} (lambda {:e}, rho {:e})",
                -delta_predicted, phi, lambda, rho
            )));
        }
        let ratio = delta_actual / delta_predicted;
        let (factor, accept) = config.ratio_rule(ratio);
        record.ratio = Some(ratio);
        record.accepted = accept;
        trace.push(record);
        if accept {
            current = next;
            phi = phi_next;
        }
        rho *= factor;
        if rho < config.rho_min {
            return Ok(PassOutcome {
                current,
                rho,
                termination: Termination::TrustRegionFloor,
            });
        }
    }
    Ok(PassOutcome {
        current,
        rho,
        termination: Termination::IterationLimit,
    })
}

/// Run the trust-region SCP loop from `u_init` (projected onto the input set
/// first). If a converged solution still violates the soft constraints, λ
/// is raised and the loop re-run from that solution.
pub fn scp_solve(
    problem: &MpcProblem,
    u_init: &[Vec<f64>],
    config: &ScpConfig,
) -> Result<ScpReport> {
    let spec = problem.spec;
    spec.validate()?;
    config.validate()?;
    check_dim("initial plan", spec.horizon, u_init.len())?;
    check_dim("previous input", problem.arspec.input_dim, problem.previous_input.len())?;
    for u in u_init {
        check_dim("initial input", problem.arspec.input_dim, u.len())?;
    }

    let start = project_inputs(spec, problem.previous_input, u_init);
    let mut current = evaluate(problem, start)?;
    let mut lambda = config.lambda;
    let mut trace = Vec::new();
    let mut pass = 0;
    let outcome = loop {
        let out = run_pass(problem, current, lambda, pass, config, &mut trace)?;
        let weak = out.termination == Termination::Converged
            && out.current.cost.violation > config.violation_tol;
        if weak && pass < config.max_lambda_increases && lambda < config.lambda_max {
            lambda = (lambda * config.lambda_growth).min(config.lambda_max);
            log::debug!("soft constraints violated at convergence; lambda -> {lambda:e}");
            current = out.current;
            pass += 1;
            continue;
        }
        break out;
    };
    let Iterate {
        inputs,
        rollout,
        cost,
    } = outcome.current;
    Ok(ScpReport {
        iterations: trace,
        inputs,
        means: rollout.means,
        variances: rollout.variances,
        phi: cost.penalized(lambda),
        cost,
        lambda,
        rho: outcome.rho,
        converged: outcome.termination == Termination::Converged,
        termination: outcome.termination,
    })
}
