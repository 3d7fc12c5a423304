//! Unsupervised skill discovery on a toy quadruped surrogate.
//!
//! A skill-conditioned policy (plain MLP, mixture of experts, or mixture of
//! Gram–Schmidt-orthogonalised experts) is trained with PPO on an intrinsic
//! reward produced by several skill discriminators, each watching a disjoint
//! slice of the motion observation. Learned skills are scored by how much of
//! the normalised state space their rollouts occupy.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod eval;
pub mod layout;
pub mod nets;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
pub use layout::{Action, Channel, ChannelLayout, MotionObservation, PolicyObservation, SkillCode};
