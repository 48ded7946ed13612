//! Multi-agent reinforcement learning with communication under adversarial
//! influence, regularized by counterfactual power estimates.

pub mod commnet;
pub mod envcore;
pub mod harness;
pub mod learners;
pub mod par;
pub mod power;
pub mod worlds;
