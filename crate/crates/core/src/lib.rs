//! Finite-horizon LQ control when the controller's state information is
//! stale.
//!
//! A plant `x_{k+1} = A x_k + B u_k + w_k` is measured every step, but a
//! queue between sensor and controller decides which measurement (if any)
//! reaches the controller, setting the age of information `η_k`. The crate
//! provides:
//!
//! - [`riccati`]: the backward recursion for `S_k`, `K_k`, `Γ_k`;
//! - [`estimator`]: the controller's estimate from a stale measurement;
//! - [`controller`]: certainty-equivalence inputs `u_k = -K_k x̂_k`;
//! - [`queuing`]: zero-wait, greedy, memory-bounded greedy and an exact
//!   dynamic-programming policy on discretized noise;
//! - [`simulator`]: seeded closed-loop trajectories and Monte Carlo metrics;
//! - [`tradeoff`]: multiplier sweeps tracing average age against cost;
//! - [`cli`]: the `aoi-control` command line.

pub mod cli;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod queuing;
pub mod riccati;
pub mod simulator;
pub mod tradeoff;

pub use error::{Error, Result};
pub use model::{validate_model, Age, CostWeights, PlantModel, ValidationReport};
pub use riccati::{solve_riccati, RiccatiSolution};
