//! Policies and their training: tabular Q-learning, a clipped actor-critic
//! over hand-rolled networks, and the training loop that injects CPR shaping.

pub mod actor_critic;
pub mod approx;
pub mod gnn;
pub mod policy;
pub mod tabular;
pub mod train;

pub use actor_critic::{actor_critic_update, AcConfig, AcError, AcSample};
pub use approx::{Adam, ApproxError, Mlp};
pub use gnn::GnnActor;
pub use policy::{ActMode, Actor, Controller, Decision, Neural, PolicySet, Script};
pub use tabular::{q_update, EpsilonSchedule, QTable};
pub use train::{
    init_policies, train, TrainError, TrainLog, TrainOptions, TrainOutput, TrainSchedule,
};
