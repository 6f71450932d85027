//! Distributed sequential joint detection and estimation.
//!
//! Sensors observe i.i.d. Gaussian samples whose random mean depends on one
//! of two hypotheses, exchange information with the consensus+innovations
//! recursion, and each runs a truncated sequential test that stops as early
//! as possible on average while keeping both error probabilities and both
//! conditional MSEs below prescribed levels.
//!
//! - [`network`]: graphs, weight matrices and state variances.
//! - [`model`]: the Bayesian model and its posterior predictive.
//! - [`policy`]: stopping costs, kernels, backward induction, evaluation.
//! - [`design`]: cost-coefficient selection by linear programming.
//! - [`simulate`]: Monte Carlo validation over the whole network.
//! - [`cli`]: configuration, file formats, plots and commands.

pub mod cli;
pub mod design;
pub mod error;
pub mod model;
pub mod network;
pub mod policy;
pub mod simulate;

pub use error::{Error, Result};
