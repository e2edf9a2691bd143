//! Simulator and solvers for federated meta-learning over a multi-access
//! wireless network.
//!
//! The crate covers three layers:
//!
//! * [`metacore`], [`tasks`] and [`selection`]: meta-gradients on analytic
//!   loss families, synthetic non-IID populations, and contribution-score
//!   device selection.
//! * [`wireless`] and [`ural`]: the per-round cost model and the joint
//!   frequency / resource-block / power optimizer.
//! * [`harness`] and [`cli`]: experiment drivers, baselines, bound evaluation
//!   and report emission.
//!
//! Every random draw is keyed by explicit seeds (see [`rng`]), so results do
//! not depend on thread count or execution order.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod harness;
pub mod metacore;
pub mod oracles;
pub mod rng;
pub mod selection;
pub mod tasks;
pub mod ural;
pub mod wireless;

pub use error::{Error, Result};
pub use metacore::{Batch, EstimatorMode, LossFamily, LossModel, MetaHyper, ParamVector, Sample};
