//! Neural-network stack: a reverse-mode autodiff tape over 2-D arrays,
//! reusable blocks (dense, MLP, encoder, cross-attention, SimBa), the policy
//! and group-critic architectures built from them, deterministic
//! initialization, and parameter archives.
//!
//! Everything is generic over [`Scalar`] — `f32` for training, `f64` for the
//! finite-difference gradient checks — with all random draws taken in `f64`
//! so both precisions consume identical RNG sequences.

pub mod actor;
pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod lead_critic;
pub mod matmul;
pub mod scalar;
pub mod tape;

pub use actor::{
    squashed_gaussian, standard_normal, ActorNet, HlcActorConfig, HlcActorNet, MlpActorNet,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use blocks::{
    CrossAttention, Dense, EncoderBlock, InvertedBottleneck, LayerNormParams, Mlp, Module,
    SimbaNet,
};
pub use init::{orthogonal, sinusoidal_pe, RELU_GAIN};
pub use lead_critic::LeadCriticNet;
pub use scalar::Scalar;
pub use tape::{Binder, Tape, Var};
