//! Sequential policy testing in discounted tabular MDPs under a generative
//! model.
//!
//! The question answered here: does a fixed policy's discounted value on an
//! unknown MDP exceed a threshold? The library samples state–action
//! transitions according to a static allocation, maintains an empirical
//! kernel, and stops as soon as a lower-bound certificate — the minimal
//! value product over a KL ball around the empirical kernel — clears an
//! anytime-valid threshold, guaranteeing a wrong answer with probability at
//! most `δ`.
//!
//! Module map:
//!
//! * [`mdp`] — tabular primitives: values, visitation distributions,
//!   extremal values, the test answer, validation.
//! * [`reversed`] — the reversed-MDP view used to differentiate the value
//!   with respect to the kernel, plus smoothness constants.
//! * [`kl`] — divergences, projections onto KL-constrained sets, and the
//!   budget grid.
//! * [`solver`] — the non-convex lower-bound solver (nested projected
//!   gradient descent), its brute-force oracle, the `σ ↔ u` bisection, and
//!   the characteristic time.
//! * [`sampling`] — the generative-model simulator and tracking sampler.
//! * [`seqtest`] — the sequential test loop, threshold, and run records.
//! * [`instances`] — built-in benchmark instances.
//! * [`schema`] — the JSON/TOML instance file format.
//! * [`testing`] — random generators and slow oracles for tests.

pub mod instances;
pub mod kl;
mod linalg;
pub mod mdp;
pub mod reversed;
pub mod sampling;
pub mod schema;
pub mod seqtest;
pub mod solver;
pub mod testing;

pub use kl::{Allocation, BudgetVector};
pub use mdp::{MdpInstance, Sign, TransitionKernel, ValueBundle, Visitation};
pub use seqtest::{TestConfig, TestOutcome, TestRunRecord};
pub use solver::{SolveResult, SolverConfig, SolverMode};
