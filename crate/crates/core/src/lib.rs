//! Finite-MDP laboratory for policy-gradient estimation with gradient critics.
//!
//! The crate provides exact dynamic-programming oracles, batch and online
//! temporal-difference learners for the value critic and the gradient critic
//! (the function `(s, a) -> grad_theta Q(s, a)`), a family of off-policy
//! gradient estimators, benchmark environments and an experiment harness.
//!
//! Gradients are reported without the `(1 - gamma)` normalization of the
//! discounted objective unless stated otherwise.

pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod lstd;
pub mod mdp;
pub mod online;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
pub use mdp::{Dataset, FeatureMap, FiniteMdp, Transition};
pub use policy::Policy;
