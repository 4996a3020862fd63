//! Evolutionary algorithms for reinforcement learning.
//!
//! Policy-space search (generational and steady-state EAs over tabular,
//! rule-based and neural policies, SANE-style neuron/blueprint
//! co-evolution, experience-triggered rule operators) next to a tabular
//! temporal-difference baseline, on a small grid world and a perceptually
//! aliased hidden-state world.

pub mod credit;
pub mod envs;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod lamarck;
pub mod policies;
pub mod rng;
pub mod sane;
pub mod td;

pub use error::{Error, Result};
