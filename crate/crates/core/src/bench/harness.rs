//! Timing sweep over training-set sizes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::closed_loop::{run_closed_loop, ClosedLoopLog};
use super::plant::{generate_training_data, train_model};
use crate::error::Result;
use crate::gp::{GpModel, ModelDocument};
use crate::par::Execution;
use crate::scp::{ScpConfig, TrackingMpcSpec};

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub steps: usize,
    pub seed: u64,
    pub spec: TrackingMpcSpec,
    pub scp: ScpConfig,
    /// Train the models for different N concurrently.
    pub execution: Execution,
    /// Reuse trained models stored here (written on first use).
    pub cache_dir: Option<PathBuf>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 1,
            spec: TrackingMpcSpec::default(),
            scp: ScpConfig::default(),
            execution: Execution::default(),
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub step: usize,
    /// Wall-clock seconds of the SCP solve.
    pub total_time: f64,
    /// Mean conic-solver seconds per outer iteration.
    pub subproblem_time: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub failed: bool,
    pub tracking_error: f64,
    pub band_margin: f64,
    pub terminal_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub n: usize,
    pub samples: usize,
    pub median_total: f64,
    pub mean_total: f64,
    pub std_total: f64,
    pub median_subproblem: f64,
    pub mean_subproblem: f64,
    pub std_subproblem: f64,
    pub mean_iterations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub sizes: Vec<SizeStats>,
    /// Coefficient of variation of the per-size median subproblem times.
    pub subproblem_cv: f64,
    /// Median total time of the largest N over that of the smallest N.
    pub total_ratio: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub logs: Vec<(usize, ClosedLoopLog)>,
    /// Sizes whose training or run failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl BenchResult {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-size statistics, excluding the first (warm-up) step of each run
    /// and failed steps.
    pub fn summary(&self) -> BenchSummary {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let sizes: Vec<SizeStats> = ns
            .iter()
            .map(|&n| {
                let rows: Vec<&BenchRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.n == n && r.step > 0 && !r.failed)
                    .collect();
                let mut total: Vec<f64> = rows.iter().map(|r| r.total_time).collect();
                let mut sub: Vec<f64> = rows.iter().map(|r| r.subproblem_time).collect();
                let (mean_total, std_total) = mean_std(&total);
                let (mean_subproblem, std_subproblem) = mean_std(&sub);
                let iters: Vec<f64> = rows.iter().map(|r| r.outer_iterations as f64).collect();
                SizeStats {
                    n,
                    samples: rows.len(),
                    median_total: median(&mut total),
                    mean_total,
                    std_total,
                    median_subproblem: median(&mut sub),
                    mean_subproblem,
                    std_subproblem,
                    mean_iterations: mean_std(&iters).0,
                }
            })
            .collect();
        let meds: Vec<f64> = sizes.iter().map(|s| s.median_subproblem).collect();
        let (m, s) = mean_std(&meds);
        let total_ratio = match (sizes.first(), sizes.last()) {
            (Some(a), Some(b)) => b.median_total / a.median_total,
            _ => f64::NAN,
        };
        BenchSummary {
            sizes,
            subproblem_cv: s / m,
            total_ratio,
        }
    }
}

fn model_for(n: usize, options: &BenchOptions) -> Result<GpModel> {
    let cached = options
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("model_n{n}_seed{}.json", options.seed)));
    if let Some(path) = &cached {
        if path.exists() {
            return ModelDocument::load(path)?.into_model();
        }
    }
    let (x, y) = generate_training_data(n, options.seed);
    // each model trains sequentially inside; sizes run side by side
    let model = train_model(&x, &y, options.seed, Execution::Sequential)?;
    if let Some(path) = &cached {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        ModelDocument::from_model(&model).save(path)?;
    }
    Ok(model)
}

/// Train a model per N (concurrently when enabled) and run the closed loop
/// for each, one after another so the timings do not compete for cores.
pub fn benchmark(n_grid: &[usize], options: &BenchOptions) -> Result<BenchResult> {
    let models = options
        .execution
        .map_slice(n_grid, |&n| model_for(n, options));
    let mut result = BenchResult::default();
    for (&n, model) in n_grid.iter().zip(models) {
        let model = match model {
            Ok(m) => m,
            Err(e) => {
                log::error!("N = {n}: training failed: {e}");
                result.failures.push((n, e.to_string()));
                continue;
            }
        };
        let log = match run_closed_loop(&model, &options.spec, &options.scp, options.steps, options.seed) {
            Ok(l) => l,
            Err(e) => {
                log::error!("N = {n}: closed loop failed: {e}");
                result.failures.push((n, e.to_string()));
                continue;
            }
        };
        for s in &log.steps {
            result.rows.push(BenchRow {
                n,
                step: s.t,
                total_time: s.solve_time,
                subproblem_time: s.subproblem_time,
                outer_iterations: s.outer_iterations,
                converged: s.converged,
                failed: s.failed,
                tracking_error: s.predicted_mean - s.reference,
                band_margin: s.band_margin,
                terminal_margin: s.terminal_margin,
            });
        }
        result.logs.push((n, log));
    }
    Ok(result)
}
