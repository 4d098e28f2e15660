//! Class-focused online learning (CFOL) for adversarial training.
//!
//! An Exp3 adversary over classes picks which class the learner trains on
//! next; the learner runs adversarial training on examples of that class.
//! Alongside CFOL the crate implements ERM, FOL (example-level adversary),
//! LCVaR, a reweighted CFOL variant and the diagnostics used to check them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod attack;
pub mod cli;
pub mod cvar;
pub mod data;
pub mod error;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod rng;
pub mod simplex;

pub use error::{Error, Result};
