//! Algorithm variants and the full training step.

pub mod engine;
pub mod variant;

pub use engine::{
    averaged_update, draw_permutation, CriticRef, TrainEvent, TrainStats, Trainer, TrainerConfig,
};
pub use variant::{
    ActorInput, ActorKind, CentralizedKind, CriticSet, UpdateMode, VariantSpec, VARIANT_NAMES,
};
