//! Branching-time active inference over factorized discrete models.
//!
//! A [`model::TemporalSliceModel`] describes one time slice: hidden states,
//! observations, an action variable and preferences. Agents infer the current
//! slice with belief propagation, predict future slices, and search over
//! action sequences with a Monte-Carlo tree scored by expected free energy.

pub mod agent;
pub mod dsprites;
pub mod efe;
pub mod error;
pub mod harness;
pub mod inference;
pub mod inspector;
pub mod model;
pub mod par;
pub mod planner;
pub mod prediction;
pub mod tensor;

pub use error::{Error, Result, ValidationError};
