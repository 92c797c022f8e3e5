//! Contrastive-distillation locomotion training for a planar biped.

pub mod checkpoint;
pub mod clock;
pub mod contrastive;
pub mod error;
pub mod nets;
pub mod ppo;
pub mod rewards;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod terrain;

pub use error::{Error, Result};
