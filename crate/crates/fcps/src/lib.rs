//! Factored contextual policy search with Bayesian optimization.
//!
//! The crate provides:
//!
//! - [`gp`]: exact Gaussian-process regression (squared-exponential ARD
//!   kernel, Cholesky inference, marginal-likelihood hyperparameter fitting,
//!   joint posterior sampling).
//! - [`cps`]: passive contextual policy search. The factored selector
//!   re-scores all stored trajectories against the query target before
//!   fitting the reward model; the baseline regresses stored rewards on the
//!   full context.
//! - [`entropy`]: active query selection by entropy search over an explicit
//!   optimality distribution, with one re-scored GP per representer context.
//! - [`cannon`]: the toy cannon benchmark (hilly terrain, ballistic
//!   simulation with angular noise, quadratic reward, brute-force oracle).
//! - [`experiment`]: the learning-curve harness behind the `fcps` binary.

pub mod cannon;
pub mod cps;
pub mod entropy;
pub mod experiment;
pub mod gp;
pub mod opt;
pub mod seeds;
