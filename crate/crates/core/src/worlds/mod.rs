//! The three benchmark environments and a closed enum over them for
//! config-driven dispatch.

pub mod grid_coverage;
pub mod predator_prey;
pub mod rdbd;

use serde::{Deserialize, Serialize};

use crate::commnet::GraphShiftOperator;
use crate::envcore::{
    AgentId, AgentObservation, EnvError, EnvState, Environment, JointAction, MessageSpec,
    RewardStructure, StepResult,
};

pub use grid_coverage::{GcConfig, GridCoverage};
pub use predator_prey::{PpConfig, PredatorPrey};
pub use rdbd::{Rdbd, RdbdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Rdbd(RdbdConfig),
    Pp(PpConfig),
    Gc(GcConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Rdbd(_) => "rdbd",
            EnvConfig::Pp(_) => "pp",
            EnvConfig::Gc(_) => "gc",
        }
    }

    pub fn build(&self) -> World {
        match self {
            EnvConfig::Rdbd(c) => World::Rdbd(Rdbd::new(c.clone())),
            EnvConfig::Pp(c) => World::Pp(PredatorPrey::new(c.clone())),
            EnvConfig::Gc(c) => World::Gc(GridCoverage::new(c.clone())),
        }
    }
}

#[derive(Debug, Clone)]
pub enum World {
    Rdbd(Rdbd),
    Pp(PredatorPrey),
    Gc(GridCoverage),
}

macro_rules! dispatch {
    ($self:expr, $env:ident => $body:expr) => {
        match $self {
            World::Rdbd($env) => $body,
            World::Pp($env) => $body,
            World::Gc($env) => $body,
        }
    };
}

impl Environment for World {
    fn n_agents(&self) -> usize {
        dispatch!(self, e => e.n_agents())
    }

    fn n_actions(&self, agent: AgentId) -> usize {
        dispatch!(self, e => e.n_actions(agent))
    }

    fn message_spec(&self) -> MessageSpec {
        dispatch!(self, e => e.message_spec())
    }

    fn reward_structure(&self) -> RewardStructure {
        dispatch!(self, e => e.reward_structure())
    }

    fn reward_bounds(&self) -> (f64, f64) {
        dispatch!(self, e => e.reward_bounds())
    }

    fn max_steps(&self) -> u32 {
        dispatch!(self, e => e.max_steps())
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<AgentObservation>) {
        dispatch!(self, e => e.reset(seed))
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepResult, EnvError> {
        dispatch!(self, e => e.step(joint))
    }

    fn state(&self) -> EnvState {
        dispatch!(self, e => e.state())
    }

    fn observations(&self) -> Vec<AgentObservation> {
        dispatch!(self, e => e.observations())
    }

    fn comm_graph(&self) -> GraphShiftOperator {
        dispatch!(self, e => e.comm_graph())
    }

    fn regularized_agents(&self) -> Vec<AgentId> {
        dispatch!(self, e => e.regularized_agents())
    }
}

impl World {
    /// Agents trained during cooperative training.
    pub fn cooperative_learners(&self) -> Vec<AgentId> {
        match self {
            World::Rdbd(_) => vec![rdbd::RED, rdbd::BLUE],
            World::Pp(e) => (0..e.config().n_predators).collect(),
            World::Gc(e) => e.cooperative_agents(),
        }
    }

    /// Agents that play against the team.
    pub fn adversaries(&self) -> Vec<AgentId> {
        match self {
            World::Gc(e) => e.adversarial_agents(),
            _ => Vec::new(),
        }
    }

    /// Senders whose messages are replaced under adversarial communication.
    pub fn adversarial_channels(&self) -> Vec<AgentId> {
        match self {
            World::Rdbd(_) => vec![rdbd::COMM],
            World::Pp(_) => Vec::new(),
            World::Gc(e) => e.adversarial_agents(),
        }
    }

    /// Agents whose summed reward the adversarial channels minimize.
    pub fn channel_victims(&self) -> Vec<AgentId> {
        match self {
            World::Rdbd(_) => vec![rdbd::BLUE],
            World::Pp(e) => (0..e.config().n_predators).collect(),
            World::Gc(e) => e.cooperative_agents(),
        }
    }
}
