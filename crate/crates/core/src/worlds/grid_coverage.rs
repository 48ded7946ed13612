//! Grid Coverage: cooperative agents try to visit as many free cells as
//! possible while adversarial agents share the communication graph.
//!
//! Cooperative agents occupy ids `0..n_cooperative`, adversaries follow. The
//! obstacle map is generated once from `map_seed`; agent start cells are drawn
//! per episode.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commnet::{build_adjacency, GraphShiftOperator};
use crate::envcore::{
    rng_for, streams, AgentId, AgentObservation, EnvError, EnvState, Environment, JointAction,
    MessageSpec, RewardStructure, StepResult,
};
use crate::worlds::predator_prey::{displace, N_MOVES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cooperative,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialReward {
    /// Minus the cooperative team's coverage gain this step.
    ZeroSum,
    Zero,
}

/// What the coverage channel of an observation shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageView {
    /// Cells this agent has visited; teammates' progress is only known
    /// through messages.
    Own,
    /// Cells covered by the whole team.
    Team,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcConfig {
    pub size: i32,
    pub obstacle_density: f64,
    pub map_seed: u64,
    pub n_adversarial: usize,
    pub n_cooperative: usize,
    pub comm_range: i32,
    pub obs_range: i32,
    pub max_steps: u32,
    pub adversarial_reward: AdversarialReward,
    pub message_dim: usize,
    pub coverage_view: CoverageView,
}

impl Default for GcConfig {
    fn default() -> Self {
        Self {
            size: 12,
            obstacle_density: 0.2,
            map_seed: 0,
            n_adversarial: 1,
            n_cooperative: 3,
            comm_range: 6,
            obs_range: 2,
            max_steps: 86,
            adversarial_reward: AdversarialReward::ZeroSum,
            message_dim: 16,
            coverage_view: CoverageView::Own,
        }
    }
}

impl GcConfig {
    pub fn n_agents(&self) -> usize {
        self.n_adversarial + self.n_cooperative
    }

    /// Independent of the number of agents.
    pub fn observation_len(&self) -> usize {
        let side = (2 * self.obs_range + 1) as usize;
        side * side * 3 + 2
    }

    pub fn roles(&self) -> Vec<Role> {
        let mut roles = vec![Role::Cooperative; self.n_cooperative];
        roles.extend(std::iter::repeat_n(Role::Adversarial, self.n_adversarial));
        roles
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    size: i32,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(size: i32) -> Self {
        Self {
            size,
            cells: vec![false; (size * size) as usize],
        }
    }

    pub fn size(&self) -> i32 {
        self.size
    }

    pub fn inside(&self, p: (i32, i32)) -> bool {
        (0..self.size).contains(&p.0) && (0..self.size).contains(&p.1)
    }

    pub fn get(&self, p: (i32, i32)) -> bool {
        self.cells[(p.0 * self.size + p.1) as usize]
    }

    pub fn set(&mut self, p: (i32, i32), v: bool) {
        self.cells[(p.0 * self.size + p.1) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn positions(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        let s = self.size;
        (0..s * s)
            .filter(|&k| self.cells[k as usize])
            .map(move |k| (k / s, k % s))
    }
}

/// Seeded obstacle grid; free cells form one 4-connected region.
pub fn generate_obstacles(size: i32, density: f64, seed: u64) -> Mask {
    let mut rng = rng_for(seed, streams::ENV, 0xC0DE);
    let mut obstacles = Mask::new(size);
    for r in 0..size {
        for c in 0..size {
            obstacles.set((r, c), rng.gen_bool(density.clamp(0.0, 0.95)));
        }
    }
    // Keep the largest free component.
    let mut label = vec![usize::MAX; (size * size) as usize];
    let mut best = (0usize, 0usize);
    let mut next = 0;
    for start in obstacles.positions_free() {
        if label[(start.0 * size + start.1) as usize] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        label[(start.0 * size + start.1) as usize] = next;
        let mut count = 0;
        while let Some(p) = queue.pop_front() {
            count += 1;
            for a in 0..4 {
                let q = displace(p, a);
                if obstacles.inside(q)
                    && !obstacles.get(q)
                    && label[(q.0 * size + q.1) as usize] == usize::MAX
                {
                    label[(q.0 * size + q.1) as usize] = next;
                    queue.push_back(q);
                }
            }
        }
        if count > best.1 {
            best = (next, count);
        }
        next += 1;
    }
    for r in 0..size {
        for c in 0..size {
            if label[(r * size + c) as usize] != best.0 {
                obstacles.set((r, c), true);
            }
        }
    }
    obstacles
}

impl Mask {
    fn positions_free(&self) -> Vec<(i32, i32)> {
        let s = self.size;
        (0..s * s)
            .filter(|&k| !self.cells[k as usize])
            .map(|k| (k / s, k % s))
            .collect()
    }
}

/// Coverage rewards for one step. A cooperative agent that moved onto an
/// uncovered free cell earns +1 and covers it; when several arrive at the
/// same cell the lowest id takes the credit. Adversaries receive
/// `adversarial_reward` applied to the team's gain.
pub fn gc_step_reward(
    covered: &mut Mask,
    obstacles: &Mask,
    moves: &[((i32, i32), (i32, i32))],
    roles: &[Role],
    adversarial_reward: AdversarialReward,
) -> Vec<f64> {
    let mut rewards = vec![0.0; moves.len()];
    let mut gain = 0.0;
    for (i, &(from, to)) in moves.iter().enumerate() {
        if roles[i] != Role::Cooperative || from == to || obstacles.get(to) || covered.get(to) {
            continue;
        }
        covered.set(to, true);
        rewards[i] = 1.0;
        gain += 1.0;
    }
    for (i, role) in roles.iter().enumerate() {
        if *role == Role::Adversarial {
            rewards[i] = match adversarial_reward {
                AdversarialReward::ZeroSum => -gain,
                AdversarialReward::Zero => 0.0,
            };
        }
    }
    rewards
}

#[derive(Debug, Clone)]
pub struct GridCoverage {
    config: GcConfig,
    roles: Vec<Role>,
    obstacles: Mask,
    covered: Mask,
    /// Cells each agent has stood on this episode.
    trails: Vec<Mask>,
    positions: Vec<(i32, i32)>,
    t: u32,
    done: bool,
    rng: ChaCha8Rng,
}

impl GridCoverage {
    pub fn new(config: GcConfig) -> Self {
        let obstacles = generate_obstacles(config.size, config.obstacle_density, config.map_seed);
        Self {
            roles: config.roles(),
            covered: Mask::new(config.size),
            trails: vec![Mask::new(config.size); config.n_agents()],
            positions: vec![(0, 0); config.n_agents()],
            obstacles,
            config,
            t: 0,
            done: true,
            rng: rng_for(0, streams::ENV, 0),
        }
    }

    pub fn config(&self) -> &GcConfig {
        &self.config
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn cooperative_agents(&self) -> Vec<AgentId> {
        (0..self.config.n_cooperative).collect()
    }

    pub fn adversarial_agents(&self) -> Vec<AgentId> {
        (self.config.n_cooperative..self.config.n_agents()).collect()
    }

    pub fn obstacles(&self) -> &Mask {
        &self.obstacles
    }

    pub fn covered(&self) -> &Mask {
        &self.covered
    }

    pub fn positions(&self) -> &[(i32, i32)] {
        &self.positions
    }

    pub fn free_cells(&self) -> usize {
        (self.config.size * self.config.size) as usize - self.obstacles.count()
    }

    pub fn coverage_pct(&self) -> f64 {
        100.0 * self.covered.count() as f64 / self.free_cells() as f64
    }

    fn blocked(&self, p: (i32, i32)) -> bool {
        !self.obstacles.inside(p) || self.obstacles.get(p)
    }

    fn observe_agent(&self, agent: AgentId) -> AgentObservation {
        let r = self.config.obs_range;
        let me = self.positions[agent];
        let coverage = match self.config.coverage_view {
            CoverageView::Own => &self.trails[agent],
            CoverageView::Team => &self.covered,
        };
        let mut features = Vec::with_capacity(self.config.observation_len());
        for dr in -r..=r {
            for dc in -r..=r {
                let cell = (me.0 + dr, me.1 + dc);
                if self.blocked(cell) {
                    features.extend([1.0, 0.0, 0.0]);
                    continue;
                }
                let others = self
                    .positions
                    .iter()
                    .enumerate()
                    .any(|(j, &p)| j != agent && p == cell);
                features.extend([
                    0.0,
                    f64::from(u8::from(coverage.get(cell))),
                    f64::from(u8::from(others)),
                ]);
            }
        }
        let scale = f64::from((self.config.size - 1).max(1));
        features.push(f64::from(me.0) / scale);
        features.push(f64::from(me.1) / scale);
        AgentObservation {
            features,
            legal_actions: (0..N_MOVES).collect(),
        }
    }
}

impl Environment for GridCoverage {
    fn n_agents(&self) -> usize {
        self.config.n_agents()
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
        RewardStructure::IndividualSummed
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let n = self.config.n_cooperative as f64;
        match self.config.adversarial_reward {
            AdversarialReward::ZeroSum => (-n, 1.0),
            AdversarialReward::Zero => (0.0, 1.0),
        }
    }

    fn max_steps(&self) -> u32 {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<AgentObservation>) {
        self.rng = rng_for(seed, streams::ENV, 0);
        let free = self.obstacles.positions_free();
        self.positions = (0..self.config.n_agents())
            .map(|_| free[self.rng.gen_range(0..free.len())])
            .collect();
        self.covered = Mask::new(self.config.size);
        self.trails = vec![Mask::new(self.config.size); self.config.n_agents()];
        for (trail, &p) in self.trails.iter_mut().zip(&self.positions) {
            trail.set(p, true);
        }
        self.t = 0;
        self.done = false;
        (self.state(), self.observations())
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepResult, EnvError> {
        self.validate(joint)?;
        self.t += 1;
        let moves: Vec<_> = self
            .positions
            .iter()
            .zip(&joint.actions)
            .map(|(&from, &a)| {
                let to = displace(from, a);
                (from, if self.blocked(to) { from } else { to })
            })
            .collect();
        let rewards = gc_step_reward(
            &mut self.covered,
            &self.obstacles,
            &moves,
            &self.roles,
            self.config.adversarial_reward,
        );
        self.positions = moves.iter().map(|&(_, to)| to).collect();
        for (trail, &p) in self.trails.iter_mut().zip(&self.positions) {
            trail.set(p, true);
        }
        let covered = self.covered.count();
        self.done = self.t >= self.config.max_steps || covered == self.free_cells();
        let info = BTreeMap::from([
            ("coverage_pct".to_string(), self.coverage_pct()),
            ("covered".to_string(), covered as f64),
        ]);
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: self.done,
            info,
        })
    }

    fn state(&self) -> EnvState {
        EnvState {
            t: self.t,
            done: self.done,
        }
    }

    fn observations(&self) -> Vec<AgentObservation> {
        (0..self.n_agents())
            .map(|i| self.observe_agent(i))
            .collect()
    }

    fn comm_graph(&self) -> GraphShiftOperator {
        build_adjacency(&self.positions, self.config.comm_range)
    }

    fn regularized_agents(&self) -> Vec<AgentId> {
        self.cooperative_agents()
    }
}
