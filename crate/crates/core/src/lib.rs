//! Batch reinforcement-learning risk laboratory.
//!
//! This crate gathers, at desk scale, the pieces needed to study Bellman-error
//! minimization from batch data with exact tabular oracles:
//!
//! * [`mdp`] — finite episodic MDPs, Bellman operators, optimal Q-functions,
//!   policy evaluation and concentrability diagnostics. Everything here is
//!   computed by exact dynamic programming and serves as ground truth for the
//!   rest of the crate.
//! * [`func_approx`] — the four function families (finite, linear, kernel,
//!   sparse-linear) with evaluation, greedy policies, constrained
//!   least-squares fitting and completeness-gap diagnostics.
//! * [`risk`] — empirical losses over batch datasets (the naive squared
//!   Bellman residual, its double-sampling debiased variant, per-step fitted
//!   Q-iteration losses and the minimax loss) together with their exact
//!   expectations by enumeration.
//! * [`learners`] — double-sampling ERM, fitted Q-iteration and the minimax
//!   estimator, plus excess-risk reporting against the exact oracle.
//! * [`complexity`] — empirical / population / local Rademacher complexity
//!   estimation with exact inner suprema per family, the sub-root fixed-point
//!   solver for critical radii, closed-form complexity bounds and risk-bound
//!   right-hand sides.
//! * [`hardness`] — the single-action three-step lower-bound MDP family, its
//!   closed-form Bellman errors, exact Bayes and double-sampling classifiers
//!   for the hidden bit, and the separation experiment built on them.
//! * [`harness`] — dataset generation, seeded experiment orchestration and
//!   CSV / text reporting.
//!
//! All state, action and step indices are 0-based throughout, including in
//! serialized formats.
//!
//! ```
//! use std::sync::Arc;
//! use brl_core::func_approx::{FamilyStep, FunctionFamily};
//! use brl_core::harness::generate_dataset;
//! use brl_core::learners::{fqi, report_excess_risk};
//! use brl_core::mdp::{BatchDistribution, TabularMdp};
//! use brl_core::risk::bellman_error;
//!
//! // a two-state, two-action, one-step MDP
//! let mdp = TabularMdp::new(
//!     1, 2, 2, 0,
//!     vec![vec![
//!         vec![vec![0.7, 0.3], vec![0.2, 0.8]],
//!         vec![vec![0.5, 0.5], vec![0.9, 0.1]],
//!     ]],
//!     vec![vec![vec![0.2, 0.5], vec![0.1, 0.9]]],
//! )?;
//! let mu = BatchDistribution::uniform(1, 2, 2);
//!
//! // a two-member finite family containing the optimal Q-function
//! let q_star = mdp.optimal_q();
//! let family = Arc::new(FunctionFamily::new(
//!     2, 2, 1.0,
//!     vec![FamilyStep::Finite {
//!         members: vec![q_star[0].clone(), vec![vec![0.4, 0.4], vec![0.4, 0.4]]],
//!     }],
//! )?);
//!
//! // fit on sampled batch data and compare against the exact oracle
//! let data = generate_dataset(&mdp, &mu, 200, 7)?;
//! let mut result = fqi(&family, &data)?;
//! let excess = report_excess_risk(&mdp, &mu, &family, &mut result)?;
//! assert_eq!(excess, 0.0); // the optimal member wins
//! assert!(bellman_error(&mdp, &mu, &result.f_hat)? < 1e-12);
//! # Ok::<(), brl_core::BrlError>(())
//! ```

// index loops over (h, s, a, s') grids mirror the math; the iterator forms
// clippy prefers read worse here
#![allow(clippy::needless_range_loop)]

pub mod complexity;
pub mod error;
pub mod func_approx;
pub mod hardness;
pub mod harness;
pub mod learners;
pub mod mdp;
pub mod risk;
pub mod rng;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{BrlError, Result};
pub use func_approx::{FamilyStep, FunctionFamily, QFunction};
pub use mdp::{BatchDistribution, Policy, TabularMdp};
pub use risk::{Dataset, DoubleDataset};
