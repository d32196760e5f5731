//! Multi-robot search and rescue on grid worlds with fuzzy-logic model
//! predictive control.
//!
//! The crate covers the whole pipeline: a ground-truth simulator with a
//! noisy range-limited sensor ([`sim`]), Bayesian and fuzzy knowledge maps
//! ([`belief`], [`membership`]), the fuzzy aggregation calculus ([`fuzzy`]),
//! metaheuristic solvers ([`optim`]), the single-robot planner ([`flmpc`]),
//! multi-robot coordination and mission loops ([`coordination`]), the
//! cluster-level parent planner ([`parent`]), a stochastic-cost baseline
//! ([`smpc`]) and a batch experiment harness ([`harness`]).

// `!(a < b)` is used on purpose in validation so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod coordination;
pub mod error;
pub mod flmpc;
pub mod fuzzy;
pub mod grid;
pub mod harness;
pub mod log;
pub mod membership;
pub mod optim;
pub mod parent;
pub mod sim;
pub mod smpc;

pub use error::{Error, Result};
pub use grid::{Cell, Grid};
