//! Simulation environment: rigid-body dynamics plus the RL-facing wrapper
//! (observations, commands, domain randomization, termination, curriculum).

pub mod dynamics;
pub mod env;
