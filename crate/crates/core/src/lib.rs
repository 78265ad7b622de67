//! Robust training of feed-forward networks viewed as discrete-time dynamical
//! systems.
//!
//! A `T`-layer network is the controlled system `x_{t+1} = f_t(x_t, θ_t)` with
//! an input perturbation `η` entering through the first layer,
//! `x_1 = f_0(x_0 + η, θ_0)`. Gradients are computed by a backward costate
//! sweep (equivalent to backpropagation), which lets the adversary reuse a
//! frozen first-layer costate for several cheap perturbation updates per full
//! backward pass (YOPO-m-n training).
//!
//! Module map:
//! - [`numerics`]: dense vectors/matrices, seeded RNG, finite differences.
//! - [`dynsys`]: network specification, parameters, forward sweeps, losses.
//! - [`hamiltonian`]: Hamiltonian evaluation and the backward costate sweep.
//! - [`adversary`]: perturbation balls, PGD, and the frozen-costate attack.
//! - [`trainer`]: minibatch training loop, evaluation, metrics.
//! - [`bounds`]: closed-form convergence-bound evaluators and constant
//!   estimation.
//! - [`diagnostics`]: drift/oracle-error measurements and gradient checks.
//! - [`dataio`]: IDX datasets, synthetic data, metrics CSV, checkpoints.

pub mod adversary;
pub mod bounds;
pub mod dataio;
pub mod diagnostics;
pub mod dynsys;
mod error;
pub mod hamiltonian;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
