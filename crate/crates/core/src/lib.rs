//! Linearized Gaussian Process model predictive control.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`] and [`gp`]: squared-exponential kernel with analytic derivatives,
//!   exact GP regression, and marginal-likelihood hyperparameter fitting.
//! * [`lingp`]: the joint posterior of a GP's value and gradient at a point,
//!   giving a predictor whose mean is affine and whose variance is a convex
//!   quadratic in the input displacement.
//! * [`argp`]: autoregressive bookkeeping and zero-variance multistep rollouts.
//! * [`conic`]: a dense primal-dual interior-point solver for quadratic
//!   objectives over linear equalities, boxes and second-order cones.
//! * [`scp`]: the tracking-MPC template, its exact-penalty cost, the convex
//!   subproblem builder and the trust-region sequential convex programming loop.
//! * [`bench`]: the benchmark plant, training-data generation, closed-loop
//!   simulation, a derivative-free reference solver and the timing harness.
//!
//! Data-parallel loops (Gram matrices, batched linearizations, multi-start
//! searches, model sweeps) run on rayon when the `parallel` feature is on and
//! fall back to plain iterators otherwise; see [`par::Execution`].

pub mod argp;
pub mod bench;
pub mod conic;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod lingp;
mod linalg;
pub mod par;
pub mod scp;

pub use error::{Error, Result};
