//! Generalized linear contextual bandits with limited adaptivity.
//!
//! The crate provides the batched policy [`bandit::BGlinCb`], the rarely
//! switching policy [`bandit::RsGlinCb`], the GLM estimation routines they
//! rely on, optimal experimental design helpers and a seeded simulation
//! environment.

pub mod bandit;
pub mod design;
pub mod env;
pub mod estimator;
pub mod glm;
pub mod linalg;

pub use glm::GlmLink;
pub use linalg::{Matrix, SpdMatrix, Vector};
