use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::plant::{plant_ar_spec, plant_step, PlantState};
use crate::argp::ArState;
use crate::error::{check_dim, Result};
use crate::gp::GpModel;
use crate::scp::{scp_solve, MpcProblem, ScpConfig, ScpReport, TrackingMpcSpec};

/// Setpoint schedule of the benchmark: −0.5 up to step 50, −0.2 after.
pub fn reference_at(t: usize) -> f64 {
    if t <= 50 {
        -0.5
    } else {
        -0.2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub reference: f64,
    /// Measurement the controller acted on.
    pub y_measured: f64,
    pub u: f64,
    /// Plant state after applying `u`.
    pub x: f64,
    /// Model prediction of the output produced by `u`.
    pub predicted_mean: f64,
    pub predicted_std: f64,
    pub converged: bool,
    /// The solver failed and the previous input was held.
    pub failed: bool,
    pub outer_iterations: usize,
    pub lambda: f64,
    pub phi: f64,
    /// Wall-clock seconds for the whole SCP solve.
    pub solve_time: f64,
    /// Mean conic-solver seconds per outer iteration.
    pub subproblem_time: f64,
    /// Smallest slack of the κσ band over the predicted horizon.
    pub band_margin: f64,
    /// Slack of the terminal constraint.
    pub terminal_margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopLog {
    pub steps: Vec<StepLog>,
    /// SCP report per step; None where the solve failed.
    pub reports: Vec<Option<ScpReport>>,
}

impl ClosedLoopLog {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.steps {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn margins(spec: &TrackingMpcSpec, report: &ScpReport) -> (f64, f64) {
    let mut band = f64::INFINITY;
    for (m, v) in report.means.iter().zip(&report.variances) {
        let ks = spec.kappa * v.max(0.0).sqrt();
        band = band.min(m - ks - spec.output_min).min(spec.output_max - m - ks);
    }
    let last = report.means.len() - 1;
    let ks = spec.kappa * report.variances[last].max(0.0).sqrt();
    let terminal = spec.terminal_halfwidth - (report.means[last] - spec.reference).abs() - ks;
    (band, terminal)
}

/// Simulate `steps` MPC steps on the noisy plant from x₀ = 0.
///
/// Each step measures the plant, solves the tracking problem warm-started
/// from the shifted previous plan and applies the first input. A failed
/// solve holds the previous input.
pub fn run_closed_loop(
    model: &GpModel,
    spec: &TrackingMpcSpec,
    config: &ScpConfig,
    steps: usize,
    seed: u64,
) -> Result<ClosedLoopLog> {
    let arspec = plant_ar_spec();
    check_dim("model input dimension", arspec.gp_dim(), model.dim())?;
    spec.validate()?;
    config.validate()?;
    let h = spec.horizon;
    let mut plant = PlantState::new(0.0, seed);
    let mut y = plant.measure(true);
    let mut u_prev = 0.0;
    let mut plan = vec![vec![0.0]; h];
    let mut cfg = config.clone();
    let mut log = ClosedLoopLog::default();
    for t in 0..steps {
        let spec_t = TrackingMpcSpec {
            reference: reference_at(t),
            ..spec.clone()
        };
        let init = ArState::new(&arspec, vec![y], Vec::new())?;
        let prev = [u_prev];
        let problem = MpcProblem {
            model,
            spec: &spec_t,
            arspec: &arspec,
            init: &init,
            previous_input: &prev,
        };
        let start = Instant::now();
        let outcome = scp_solve(&problem, &plan, &cfg);
        let solve_time = start.elapsed().as_secs_f64();
        let record = match &outcome {
            Ok(report) => {
                let (band_margin, terminal_margin) = margins(&spec_t, report);
                let iters = report.iterations.len();
                StepLog {
                    t,
                    reference: spec_t.reference,
                    y_measured: y,
                    u: report.inputs[0][0],
                    x: 0.0,
                    predicted_mean: report.means[0],
                    predicted_std: report.variances[0].max(0.0).sqrt(),
                    converged: report.converged,
                    failed: false,
                    outer_iterations: iters,
                    lambda: report.lambda,
                    phi: report.phi,
                    solve_time,
                    subproblem_time: report.total_subproblem_time() / iters.max(1) as f64,
                    band_margin,
                    terminal_margin,
                }
            }
            Err(e) => {
                log::warn!("step {t}: SCP failed ({e}); holding input {u_prev}");
                let (mean, var) = model.predict(&[y, u_prev])?;
                StepLog {
                    t,
                    reference: spec_t.reference,
                    y_measured: y,
                    u: u_prev,
                    x: 0.0,
                    predicted_mean: mean,
                    predicted_std: var.sqrt(),
                    converged: false,
                    failed: true,
                    outer_iterations: 0,
                    lambda: cfg.lambda,
                    phi: f64::NAN,
                    solve_time,
                    subproblem_time: 0.0,
                    band_margin: f64::NAN,
                    terminal_margin: f64::NAN,
                }
            }
        };
        let u = record.u;
        y = plant_step(&mut plant, u, true);
        u_prev = u;
        if let Ok(report) = &outcome {
            plan = report.inputs[1..].to_vec();
            plan.push(report.inputs[h - 1].clone());
            if !config.reset_rho {
                cfg.rho0 = if report.rho > config.rho_min && report.rho > 0.0 {
                    report.rho
                } else {
                    config.rho0
                };
            }
        } else {
            plan = vec![vec![u_prev]; h];
        }
        log.steps.push(StepLog {
            x: plant.x,
            ..record
        });
        log.reports.push(outcome.ok());
    }
    Ok(log)
}
