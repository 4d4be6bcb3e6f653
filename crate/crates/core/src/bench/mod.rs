//! The benchmark plant and the harness around it: training data, model
//! training, closed-loop runs, a derivative-free reference solver and the
//! timing sweep over training-set sizes.
//!
//! The plant is the scalar system
//!
//! ```text
//! x_k = x_{k−1} − 0.5·tanh(x_{k−1} + u_k³),   y_k = x_k + w_k,   w_k ~ N(0, 0.025²)
//! ```
//!
//! identified by a GP on the regressor `[y_{k−1}, u_k]`.

mod closed_loop;
mod harness;
mod oracle;
mod plant;

pub use closed_loop::{reference_at, run_closed_loop, ClosedLoopLog, StepLog};
pub use harness::{benchmark, BenchOptions, BenchResult, BenchRow, BenchSummary, SizeStats};
pub use oracle::{oracle_solve, OracleResult};
pub use plant::{
    generate_training_data, generate_training_data_with, plant_ar_spec, plant_dynamics,
    plant_step, train_model, DataConfig, PlantState, NOISE_STD,
};
