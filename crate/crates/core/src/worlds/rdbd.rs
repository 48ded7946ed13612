//! Red-Door-Blue-Door: sequential coordination through a single message bit.
//!
//! Agents: red (0), blue (1) and the communication agent (2). The first step
//! of every episode is the communication round: the communication agent
//! observes red's hidden intent and speaks, door actions are not yet legal.
//! From then on red may open the red door, blue may open either door. The
//! episode succeeds when the red door is open no later than the blue door.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commnet::GraphShiftOperator;
use crate::envcore::{
    rng_for, streams, AgentId, AgentObservation, EnvError, EnvState, Environment, JointAction,
    MessageSpec, MessageVector, RewardStructure, StepResult,
};

pub const RED: AgentId = 0;
pub const BLUE: AgentId = 1;
pub const COMM: AgentId = 2;

pub const WAIT: usize = 0;
/// Red's and blue's shared index for opening the red door.
pub const OPEN_RED: usize = 1;
pub const OPEN_BLUE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Cooperative,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Running,
    Success,
    WrongOrder,
    Timeout,
}

impl Outcome {
    pub fn code(self) -> f64 {
        match self {
            Outcome::Running => 0.0,
            Outcome::Success => 1.0,
            Outcome::WrongOrder => 2.0,
            Outcome::Timeout => 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdbdConfig {
    pub max_steps: u32,
    /// Probability that red's hidden intent is adversarial at reset.
    pub adversarial_prob: f64,
}

impl Default for RdbdConfig {
    fn default() -> Self {
        Self {
            max_steps: 50,
            adversarial_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RdbdState {
    pub red_opened_at: Option<u32>,
    pub blue_opened_at: Option<u32>,
    pub red_intent: Intent,
    pub t: u32,
}

impl RdbdState {
    pub fn outcome(&self, max_steps: u32) -> Outcome {
        match self.blue_opened_at {
            Some(tb) if tb >= max_steps => Outcome::Timeout,
            Some(tb) if self.red_opened_at.is_some_and(|tr| tr <= tb) => Outcome::Success,
            Some(_) => Outcome::WrongOrder,
            None if self.t >= max_steps => Outcome::Timeout,
            None => Outcome::Running,
        }
    }
}

/// Blue's reward is `1/(t-1)` for a legal-order success at `t < max`, `-1`
/// for wrong order or timeout, `0` otherwise. Red mirrors blue when
/// cooperative and negates it when adversarial.
pub fn rdbd_reward(state: &RdbdState, max_steps: u32) -> BTreeMap<AgentId, f64> {
    let blue = match state.outcome(max_steps) {
        Outcome::Success => {
            let t = state.blue_opened_at.unwrap_or(2);
            // Door actions are illegal during the communication round, so t >= 2.
            debug_assert!(t >= 2);
            1.0 / f64::from(t.max(2) - 1)
        }
        Outcome::WrongOrder | Outcome::Timeout => -1.0,
        Outcome::Running => 0.0,
    };
    let red = match state.red_intent {
        Intent::Cooperative => blue,
        Intent::Adversarial => -blue,
    };
    BTreeMap::from([(RED, red), (BLUE, blue), (COMM, blue)])
}

pub fn message_alphabet() -> Vec<MessageVector> {
    vec![
        MessageVector::new(vec![1.0, 0.0]),
        MessageVector::new(vec![0.0, 1.0]),
    ]
}

/// `m = 1` encodes a cooperative red.
pub fn encode_bit(bit: usize) -> MessageVector {
    message_alphabet()[bit].clone()
}

pub fn decode_bit(m: &MessageVector) -> Option<usize> {
    message_alphabet().iter().position(|a| a == m)
}

pub fn truthful_bit(intent: Intent) -> usize {
    match intent {
        Intent::Cooperative => 1,
        Intent::Adversarial => 0,
    }
}

pub enum Channel<'a> {
    Truthful,
    /// Flips the bit whenever the flipped message strictly lowers the
    /// receiver's value.
    Adversarial(&'a dyn Fn(&MessageVector) -> f64),
    Disabled,
}

pub fn rdbd_comm_message(intent: Intent, channel: Channel<'_>) -> MessageVector {
    let truthful = encode_bit(truthful_bit(intent));
    match channel {
        Channel::Truthful => truthful,
        Channel::Disabled => MessageVector::null(2),
        Channel::Adversarial(value) => {
            let flipped = encode_bit(1 - truthful_bit(intent));
            if value(&flipped) < value(&truthful) {
                flipped
            } else {
                truthful
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rdbd {
    config: RdbdConfig,
    state: RdbdState,
    done: bool,
    rng: ChaCha8Rng,
}

impl Rdbd {
    pub fn new(config: RdbdConfig) -> Self {
        Self {
            config,
            state: RdbdState {
                red_opened_at: None,
                blue_opened_at: None,
                red_intent: Intent::Cooperative,
                t: 0,
            },
            done: true,
            rng: rng_for(0, streams::ENV, 0),
        }
    }

    pub fn config(&self) -> &RdbdConfig {
        &self.config
    }

    pub fn set_adversarial_prob(&mut self, p: f64) {
        self.config.adversarial_prob = p;
    }

    pub fn world_state(&self) -> &RdbdState {
        &self.state
    }

    pub fn red_intent(&self) -> Intent {
        self.state.red_intent
    }

    /// Overrides the sampled intent; only valid before the first step.
    pub fn force_intent(&mut self, intent: Intent) {
        debug_assert_eq!(self.state.t, 0);
        self.state.red_intent = intent;
    }

    fn door_phase(&self) -> bool {
        self.state.t >= 1
    }

    fn observe(&self) -> Vec<AgentObservation> {
        let red_open = f64::from(u8::from(self.state.red_opened_at.is_some()));
        let blue_open = f64::from(u8::from(self.state.blue_opened_at.is_some()));
        let adversarial = f64::from(u8::from(self.state.red_intent == Intent::Adversarial));
        let (red_legal, blue_legal) = if self.door_phase() {
            (vec![WAIT, OPEN_RED], vec![WAIT, OPEN_RED, OPEN_BLUE])
        } else {
            (vec![WAIT], vec![WAIT])
        };
        vec![
            AgentObservation {
                features: vec![red_open, blue_open, adversarial],
                legal_actions: red_legal,
            },
            AgentObservation {
                features: vec![red_open, blue_open],
                legal_actions: blue_legal,
            },
            AgentObservation {
                features: vec![1.0 - adversarial],
                legal_actions: vec![0],
            },
        ]
    }
}

impl Environment for Rdbd {
    fn n_agents(&self) -> usize {
        3
    }

    fn n_actions(&self, agent: AgentId) -> usize {
        match agent {
            RED => 2,
            BLUE => 3,
            _ => 1,
        }
    }

    fn message_spec(&self) -> MessageSpec {
        MessageSpec::Discrete {
            alphabet: message_alphabet(),
        }
    }

    fn reward_structure(&self) -> RewardStructure {
        RewardStructure::ZeroSumPair
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn max_steps(&self) -> u32 {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<AgentObservation>) {
        self.rng = rng_for(seed, streams::ENV, 0);
        let intent = if self
            .rng
            .gen_bool(self.config.adversarial_prob.clamp(0.0, 1.0))
        {
            Intent::Adversarial
        } else {
            Intent::Cooperative
        };
        self.state = RdbdState {
            red_opened_at: None,
            blue_opened_at: None,
            red_intent: intent,
            t: 0,
        };
        self.done = false;
        (self.state(), self.observe())
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepResult, EnvError> {
        self.validate(joint)?;
        self.state.t += 1;
        let t = self.state.t;
        let red_opens = joint.actions[RED] == OPEN_RED || joint.actions[BLUE] == OPEN_RED;
        if red_opens && self.state.red_opened_at.is_none() {
            self.state.red_opened_at = Some(t);
        }
        if joint.actions[BLUE] == OPEN_BLUE && self.state.blue_opened_at.is_none() {
            self.state.blue_opened_at = Some(t);
        }
        let outcome = self.state.outcome(self.config.max_steps);
        self.done = outcome != Outcome::Running;
        let rewards = rdbd_reward(&self.state, self.config.max_steps);
        let info = BTreeMap::from([
            ("outcome".to_string(), outcome.code()),
            (
                "red_adversarial".to_string(),
                f64::from(u8::from(self.state.red_intent == Intent::Adversarial)),
            ),
        ]);
        Ok(StepResult {
            observations: self.observe(),
            rewards: rewards.into_values().collect(),
            done: self.done,
            info,
        })
    }

    fn state(&self) -> EnvState {
        EnvState {
            t: self.state.t,
            done: self.done,
        }
    }

    fn observations(&self) -> Vec<AgentObservation> {
        self.observe()
    }

    fn comm_graph(&self) -> GraphShiftOperator {
        GraphShiftOperator::from_edges(3, &[(BLUE, COMM)])
    }

    fn regularized_agents(&self) -> Vec<AgentId> {
        vec![BLUE]
    }
}
