//! Multi-start pattern search on the exact penalized cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::argp::rollout_mean;
use crate::error::{check_dim, Result};
use crate::par::Execution;
use crate::scp::{penalty_cost, project_inputs, MpcProblem};

const INITIAL_STEP: f64 = 0.25;
const MIN_STEP: f64 = 1e-7;
const MAX_EVALS: usize = 40_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub inputs: Vec<Vec<f64>>,
    pub cost: f64,
    pub evaluations: usize,
}

/// Minimize φ over the input set by compass search from `restarts` starts.
///
/// Start 0 is the all-zero plan, the rest are uniform random plans; every
/// trial point is projected onto the input set. Besides single-coordinate
/// moves the search also shifts whole plan suffixes, which lets it slide
/// along active rate limits.
pub fn oracle_solve(
    problem: &MpcProblem,
    lambda: f64,
    restarts: usize,
    seed: u64,
    execution: Execution,
) -> Result<OracleResult> {
    let spec = problem.spec;
    spec.validate()?;
    check_dim("previous input", problem.arspec.input_dim, problem.previous_input.len())?;
    let h = spec.horizon;
    let nu = problem.arspec.input_dim;
    let starts: Vec<Vec<Vec<f64>>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..restarts.max(1))
            .map(|i| {
                (0..h)
                    .map(|_| {
                        (0..nu)
                            .map(|_| {
                                if i == 0 {
                                    0.0
                                } else {
                                    rng.random_range(spec.input_min..=spec.input_max)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let results: Vec<Result<OracleResult>> =
        execution.map_slice(&starts, |s| search(problem, lambda, s));
    let mut best: Option<OracleResult> = None;
    for r in results {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

fn search(problem: &MpcProblem, lambda: f64, start: &[Vec<f64>]) -> Result<OracleResult> {
    let spec = problem.spec;
    let cost = |u: &[Vec<f64>]| -> Result<f64> {
        let r = rollout_mean(problem.model, problem.arspec, problem.init, u)?;
        penalty_cost(spec, &r, u, problem.previous_input, lambda)
    };
    let h = start.len();
    let nu = problem.arspec.input_dim;
    let mut u = project_inputs(spec, problem.previous_input, start);
    let mut f = cost(&u)?;
    let mut evals = 1;
    let mut step = INITIAL_STEP;
    while step > MIN_STEP && evals < MAX_EVALS {
        let mut improved = false;
        for k in 0..h {
            for c in 0..nu {
                for suffix in [false, true] {
                    for sign in [1.0, -1.0] {
                        let mut trial = u.clone();
                        let end = if suffix { h } else { k + 1 };
                        for row in &mut trial[k..end] {
                            row[c] += sign * step;
                        }
                        let trial = project_inputs(spec, problem.previous_input, &trial);
                        if trial == u {
                            continue;
                        }
                        let ft = cost(&trial)?;
                        evals += 1;
                        if ft < f {
                            u = trial;
                            f = ft;
                            improved = true;
                            break;
                        }
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(OracleResult {
        inputs: u,
        cost: f,
        evaluations: evals,
    })
}
