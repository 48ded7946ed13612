//! Predator-Prey on a small grid with local vision.
//!
//! Agents `0..n_predators` are predators, the last agent is the prey. A
//! predator that reaches the prey stays on it for the rest of the episode,
//! and the first arrival pins the prey in place. The episode ends when every
//! predator has arrived (success) or at the step limit.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commnet::GraphShiftOperator;
use crate::envcore::{
    rng_for, streams, AgentId, AgentObservation, EnvError, EnvState, Environment, JointAction,
    MessageSpec, RewardStructure, StepResult,
};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const N_MOVES: usize = 5;

pub fn displace(pos: (i32, i32), action: usize) -> (i32, i32) {
    match action {
        UP => (pos.0 - 1, pos.1),
        DOWN => (pos.0 + 1, pos.1),
        LEFT => (pos.0, pos.1 - 1),
        RIGHT => (pos.0, pos.1 + 1),
        _ => pos,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreyPolicy {
    Static,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpConfig {
    pub grid: i32,
    pub n_predators: usize,
    pub vision: i32,
    pub max_steps: u32,
    /// -1 competitive, 0 mixed, 1 cooperative.
    pub xi: i32,
    pub r_explore: f64,
    pub r_prey: f64,
    pub prey_policy: PreyPolicy,
    pub message_dim: usize,
}

impl Default for PpConfig {
    fn default() -> Self {
        Self {
            grid: 5,
            n_predators: 3,
            vision: 1,
            max_steps: 20,
            xi: 1,
            r_explore: -0.05,
            r_prey: 0.05,
            prey_policy: PreyPolicy::Random,
            message_dim: 32,
        }
    }
}

impl PpConfig {
    pub fn observation_len(&self) -> usize {
        let side = (2 * self.vision + 1) as usize;
        side * side * 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPreyState {
    pub predators: Vec<(i32, i32)>,
    pub prey: (i32, i32),
    /// `delta_i`: true while predator `i` has not reached the prey.
    pub searching: Vec<bool>,
    pub xi: i32,
    pub t: u32,
}

impl PredatorPreyState {
    /// `n_t`: predators co-located with the prey.
    pub fn on_prey(&self) -> usize {
        self.predators.iter().filter(|&&p| p == self.prey).count()
    }

    pub fn caught(&self) -> bool {
        self.searching.iter().any(|s| !s)
    }

    pub fn all_reached(&self) -> bool {
        self.searching.iter().all(|s| !s)
    }
}

/// `r_i = delta_i r_explore + (1 - delta_i) n_t^xi r_prey |xi|`.
pub fn pp_reward(state: &PredatorPreyState, agent: AgentId, r_explore: f64, r_prey: f64) -> f64 {
    if state.searching[agent] {
        return r_explore;
    }
    let n = state.on_prey();
    if n == 0 || state.xi == 0 {
        return 0.0;
    }
    (n as f64).powi(state.xi) * r_prey * f64::from(state.xi.abs())
}

#[derive(Debug, Clone)]
pub struct PredatorPrey {
    config: PpConfig,
    state: PredatorPreyState,
    done: bool,
    rng: ChaCha8Rng,
}

impl PredatorPrey {
    pub fn new(config: PpConfig) -> Self {
        let n = config.n_predators;
        Self {
            state: PredatorPreyState {
                predators: vec![(0, 0); n],
                prey: (0, 0),
                searching: vec![true; n],
                xi: config.xi,
                t: 0,
            },
            config,
            done: true,
            rng: rng_for(0, streams::ENV, 0),
        }
    }

    pub fn config(&self) -> &PpConfig {
        &self.config
    }

    pub fn world_state(&self) -> &PredatorPreyState {
        &self.state
    }

    pub fn prey_id(&self) -> AgentId {
        self.config.n_predators
    }

    pub fn predators(&self) -> Vec<AgentId> {
        (0..self.config.n_predators).collect()
    }

    fn inside(&self, p: (i32, i32)) -> bool {
        (0..self.config.grid).contains(&p.0) && (0..self.config.grid).contains(&p.1)
    }

    fn moved(&self, p: (i32, i32), action: usize) -> (i32, i32) {
        let q = displace(p, action);
        if self.inside(q) {
            q
        } else {
            p
        }
    }

    fn random_cell(&mut self) -> (i32, i32) {
        let g = self.config.grid;
        (self.rng.gen_range(0..g), self.rng.gen_range(0..g))
    }

    fn view(&self, center: (i32, i32), skip_predator: Option<AgentId>) -> Vec<f64> {
        let g = self.config.grid;
        let v = self.config.vision;
        let cells = f64::from(g * g);
        let mut out = Vec::with_capacity(self.config.observation_len());
        for dr in -v..=v {
            for dc in -v..=v {
                let cell = (center.0 + dr, center.1 + dc);
                if !self.inside(cell) {
                    out.extend([0.0, 0.0, 0.0]);
                    continue;
                }
                let location = f64::from(cell.0 * g + cell.1 + 1) / cells;
                let predator = self
                    .state
                    .predators
                    .iter()
                    .enumerate()
                    .any(|(i, &p)| Some(i) != skip_predator && p == cell);
                let prey = self.state.prey == cell;
                out.extend([
                    location,
                    f64::from(u8::from(predator)),
                    f64::from(u8::from(prey)),
                ]);
            }
        }
        out
    }

    fn observe(&self) -> Vec<AgentObservation> {
        let all_moves: Vec<usize> = (0..N_MOVES).collect();
        let mut obs: Vec<AgentObservation> = (0..self.config.n_predators)
            .map(|i| AgentObservation {
                features: self.view(self.state.predators[i], Some(i)),
                legal_actions: if self.state.searching[i] {
                    all_moves.clone()
                } else {
                    vec![STAY]
                },
            })
            .collect();
        obs.push(AgentObservation {
            features: self.view(self.state.prey, None),
            legal_actions: if self.state.caught() {
                vec![STAY]
            } else {
                all_moves
            },
        });
        obs
    }
}

impl Environment for PredatorPrey {
    fn n_agents(&self) -> usize {
        self.config.n_predators + 1
    }

    fn n_actions(&self, _agent: AgentId) -> usize {
        N_MOVES
    }

    fn message_spec(&self) -> MessageSpec {
        MessageSpec::Continuous {
            dim: self.config.message_dim,
            low: -1.0,
            high: 1.0,
        }
    }

    fn reward_structure(&self) -> RewardStructure {
        RewardStructure::Individual
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let n = self.config.n_predators as f64;
        let prey_term = match self.config.xi {
            0 => 0.0,
            xi => n.powi(xi).max(1.0) * self.config.r_prey.abs() * f64::from(xi.abs()),
        };
        let bound = self.config.r_explore.abs().max(prey_term);
        (-bound, bound)
    }

    fn max_steps(&self) -> u32 {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<AgentObservation>) {
        self.rng = rng_for(seed, streams::ENV, 0);
        let prey = self.random_cell();
        let mut predators = Vec::with_capacity(self.config.n_predators);
        while predators.len() < self.config.n_predators {
            let p = self.random_cell();
            if p != prey {
                predators.push(p);
            }
        }
        self.state = PredatorPreyState {
            predators,
            prey,
            searching: vec![true; self.config.n_predators],
            xi: self.config.xi,
            t: 0,
        };
        self.done = false;
        (self.state(), self.observe())
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepResult, EnvError> {
        self.validate(joint)?;
        self.state.t += 1;
        if !self.state.caught() {
            self.state.prey = self.moved(self.state.prey, joint.actions[self.prey_id()]);
        }
        for i in 0..self.config.n_predators {
            if self.state.searching[i] {
                self.state.predators[i] = self.moved(self.state.predators[i], joint.actions[i]);
                if self.state.predators[i] == self.state.prey {
                    self.state.searching[i] = false;
                }
            }
        }
        let mut rewards: Vec<f64> = (0..self.config.n_predators)
            .map(|i| pp_reward(&self.state, i, self.config.r_explore, self.config.r_prey))
            .collect();
        rewards.push(0.0);
        let success = self.state.all_reached();
        self.done = success || self.state.t >= self.config.max_steps;
        let reached = self.state.searching.iter().filter(|s| !**s).count();
        let info = BTreeMap::from([
            ("success".to_string(), f64::from(u8::from(success))),
            ("reached".to_string(), reached as f64),
        ]);
        Ok(StepResult {
            observations: self.observe(),
            rewards,
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
        GraphShiftOperator::fully_connected(&self.predators(), self.n_agents())
    }

    fn regularized_agents(&self) -> Vec<AgentId> {
        self.predators()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(searching: Vec<bool>, predators: Vec<(i32, i32)>, xi: i32) -> PredatorPreyState {
        PredatorPreyState {
            predators,
            prey: (2, 2),
            searching,
            xi,
            t: 3,
        }
    }

    #[test]
    fn reward_formula() {
        let s = state(vec![true, false, false], vec![(0, 0), (2, 2), (2, 2)], 1);
        assert_eq!(pp_reward(&s, 0, -0.05, 0.05), -0.05);
        assert!((pp_reward(&s, 1, -0.05, 0.05) - 0.10).abs() < 1e-15);
        let mixed = state(vec![false, true, true], vec![(2, 2), (0, 0), (1, 1)], 0);
        assert_eq!(pp_reward(&mixed, 0, -0.05, 0.05), 0.0);
        let competitive = state(vec![false, false, true], vec![(2, 2), (2, 2), (1, 1)], -1);
        assert!((pp_reward(&competitive, 0, -0.05, 0.05) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn observation_shape() {
        let mut env = PredatorPrey::new(PpConfig::default());
        let (st, obs) = env.reset(5);
        assert_eq!(st.t, 0);
        assert_eq!(obs.len(), 4);
        assert!(obs.iter().all(|o| o.features.len() == 27));
    }

    #[test]
    fn capture_is_absorbing_and_succeeds() {
        let mut env = PredatorPrey::new(PpConfig {
            prey_policy: PreyPolicy::Static,
            ..Default::default()
        });
        env.reset(9);
        env.state.prey = (2, 2);
        env.state.predators = vec![(2, 1), (1, 2), (0, 2)];
        let r = env
            .step(&JointAction::silent(vec![RIGHT, DOWN, DOWN, STAY], 32))
            .unwrap();
        assert_eq!(env.state.searching, vec![false, false, true]);
        assert!((r.rewards[0] - 0.10).abs() < 1e-15);
        assert_eq!(r.rewards[2], -0.05);
        assert_eq!(env.observations()[0].legal_actions, vec![STAY]);
        assert_eq!(env.observations()[3].legal_actions, vec![STAY]);
        let r = env
            .step(&JointAction::silent(vec![STAY, STAY, DOWN, STAY], 32))
            .unwrap();
        assert!(r.done);
        assert_eq!(r.info["success"], 1.0);
        assert!((r.rewards[2] - 0.15).abs() < 1e-15);
    }

    #[test]
    fn walls_block_moves() {
        let mut env = PredatorPrey::new(PpConfig::default());
        env.reset(1);
        env.state.predators[0] = (0, 0);
        env.state.prey = (4, 4);
        env.step(&JointAction::silent(vec![UP, STAY, STAY, STAY], 32))
            .unwrap();
        assert_eq!(env.state.predators[0], (0, 0));
    }

    #[test]
    fn truncates_at_step_limit() {
        let mut env = PredatorPrey::new(PpConfig::default());
        env.reset(2);
        env.state.prey = (4, 4);
        env.state.predators = vec![(0, 0); 3];
        let mut done = false;
        for _ in 0..20 {
            done = env
                .step(&JointAction::silent(vec![STAY; 4], 32))
                .unwrap()
                .done;
        }
        assert!(done);
        assert_eq!(env.state().t, 20);
    }
}
