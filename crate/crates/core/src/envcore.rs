//! Dec-POMDP-with-communication abstraction shared by every environment,
//! learner and the experiment harness.
//!
//! One environment step consumes a [`JointAction`]: an action per agent plus
//! the message each agent broadcasts. Messages sent at step `t` are delivered
//! alongside the observations of step `t + 1`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commnet::GraphShiftOperator;

/// Index of an agent inside one environment instance.
pub type AgentId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent} chose action {action} outside its legal set")]
    IllegalAction { agent: AgentId, action: usize },
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error("joint action covers {got} agents, environment has {expected}")]
    WrongAgentCount { expected: usize, got: usize },
    #[error("message from agent {agent} has length {got}, channel expects {expected}")]
    BadMessage {
        agent: AgentId,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub t: u32,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub features: Vec<f64>,
    pub legal_actions: Vec<usize>,
}

impl AgentObservation {
    pub fn is_legal(&self, action: usize) -> bool {
        self.legal_actions.contains(&action)
    }
}

/// Payload on the communication channel. The all-zeros payload is the NULL
/// message ("nothing was said").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageVector {
    pub payload: Vec<f64>,
}

impl MessageVector {
    pub fn new(payload: Vec<f64>) -> Self {
        Self { payload }
    }

    pub fn null(dim: usize) -> Self {
        Self {
            payload: vec![0.0; dim],
        }
    }

    pub fn is_null(&self) -> bool {
        self.payload.iter().all(|&x| x == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.payload.len()
    }
}

/// Shape of an environment's channel.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageSpec {
    /// Finite alphabet; NULL is the zero vector and is never an alphabet member.
    Discrete { alphabet: Vec<MessageVector> },
    /// Real payloads inside the box `[low, high]^dim`.
    Continuous { dim: usize, low: f64, high: f64 },
}

impl MessageSpec {
    pub fn dim(&self) -> usize {
        match self {
            MessageSpec::Discrete { alphabet } => alphabet.first().map_or(0, MessageVector::dim),
            MessageSpec::Continuous { dim, .. } => *dim,
        }
    }

    pub fn null(&self) -> MessageVector {
        MessageVector::null(self.dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointAction {
    pub actions: Vec<usize>,
    pub messages: Vec<MessageVector>,
}

impl JointAction {
    /// Every agent takes the given actions and stays silent.
    pub fn silent(actions: Vec<usize>, message_dim: usize) -> Self {
        let messages = vec![MessageVector::null(message_dim); actions.len()];
        Self { actions, messages }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<AgentObservation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

/// How the per-agent reward streams of an environment relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardStructure {
    /// Individual rewards, summed into a team score for reporting.
    IndividualSummed,
    /// Individual rewards from a per-agent formula.
    Individual,
    /// Two principal agents with opposed (or aligned) payoffs.
    ZeroSumPair,
}

/// A discrete-action Dec-POMDP with an explicit communication channel.
///
/// `Clone` doubles as the snapshot mechanism for counterfactual stepping: a
/// clone carries the environment's RNG stream, so replaying a joint action on
/// a clone reproduces the live transition exactly.
pub trait Environment: Clone + Send + Sync {
    fn n_agents(&self) -> usize;
    fn n_actions(&self, agent: AgentId) -> usize;
    fn message_spec(&self) -> MessageSpec;
    fn reward_structure(&self) -> RewardStructure;
    /// Inclusive bounds on any single per-step reward.
    fn reward_bounds(&self) -> (f64, f64);
    fn max_steps(&self) -> u32;

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<AgentObservation>);
    fn step(&mut self, joint: &JointAction) -> Result<StepResult, EnvError>;

    fn state(&self) -> EnvState;
    fn observations(&self) -> Vec<AgentObservation>;
    /// Who can transmit to whom right now.
    fn comm_graph(&self) -> GraphShiftOperator;
    /// Agents whose rewards are power-regularized during training.
    fn regularized_agents(&self) -> Vec<AgentId>;

    /// Independent copy for counterfactual stepping.
    fn snapshot(&self) -> Option<Self> {
        Some(self.clone())
    }

    /// Checks a joint action against the current state without mutating it.
    fn validate(&self, joint: &JointAction) -> Result<(), EnvError> {
        if self.state().done {
            return Err(EnvError::SteppedAfterDone);
        }
        let n = self.n_agents();
        if joint.actions.len() != n || joint.messages.len() != n {
            return Err(EnvError::WrongAgentCount {
                expected: n,
                got: joint.actions.len().min(joint.messages.len()),
            });
        }
        let dim = self.message_spec().dim();
        let observations = self.observations();
        for (agent, (obs, &action)) in observations.iter().zip(&joint.actions).enumerate() {
            if !obs.is_legal(action) {
                return Err(EnvError::IllegalAction { agent, action });
            }
            let got = joint.messages[agent].dim();
            if got != dim {
                return Err(EnvError::BadMessage {
                    agent,
                    expected: dim,
                    got,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observations: Vec<AgentObservation>,
    pub messages: Vec<MessageVector>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    pub gamma: f64,
}

impl Trajectory {
    pub fn new(gamma: f64) -> Self {
        Self {
            steps: Vec::new(),
            gamma,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards_of(&self, agent: AgentId) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(move |s| s.rewards[agent])
    }
}

/// `G = sum_t gamma^t r_t` for one agent.
pub fn discounted_return(traj: &Trajectory, agent: AgentId) -> f64 {
    // Horner form, evaluated back to front.
    traj.rewards_of(agent)
        .collect::<Vec<_>>()
        .iter()
        .rev()
        .fold(0.0, |acc, &r| r + traj.gamma * acc)
}

/// Stream identifiers for [`derive_seed`]. Each component that needs
/// randomness draws from its own stream so adding draws in one place never
/// perturbs another.
pub mod streams {
    pub const ENV: u64 = 0x0000_0000_0000_1000;
    pub const AGENT: u64 = 0x0000_0000_0000_2000;
    pub const INIT: u64 = 0x0000_0000_0000_3000;
    pub const COUNTERFACTUAL: u64 = 0x0000_0000_0000_4000;
    pub const EVAL: u64 = 0x0000_0000_0000_5000;
    pub const TRAIN: u64 = 0x0000_0000_0000_6000;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits a master seed into an independent sub-seed: `stream` names the
/// consumer (see [`streams`]) and `index` the instance (agent id, episode...).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream).wrapping_add(index))
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
