//! Multi-agent soft actor-critic with hierarchical lead critics.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`] — a small reverse-mode autodiff tape over `ndarray` matrices and
//!   the network building blocks (MLPs, pre-LN transformer encoders,
//!   cross-attention, SimBa residual heads) used by actors and critics.
//! * [`env`] — the multi-agent environment interface plus the shipped tasks:
//!   drone escort/surveillance worlds and a particle spread world.
//! * [`sac`] — per-agent soft actor-critic machinery: n-step replay buffer,
//!   Adam/RAdam optimizers, local critic and actor losses.
//! * [`trainer`] — the hierarchical lead-critic training step: group critics
//!   over agent subsets, nested sequential policy updates ordered by critic
//!   receptive field, and the named algorithm variants.
//! * [`harness`] — experiment orchestration: configuration, parallel-env
//!   collection, evaluation, metrics, aggregation, and plotting.

pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod sac;
pub mod seedstream;
pub mod trainer;

pub use error::CoreError;
