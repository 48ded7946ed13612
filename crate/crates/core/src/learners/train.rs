//! Training loop: cooperative training with optional CPR shaping, then an
//! optional adversary phase.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::actor_critic::{actor_critic_update, gae, AcConfig, AcError, AcSample};
use super::policy::{tabular_key, ActMode, Controller, Neural, PolicySet, Script};
use super::tabular::{q_update, EpsilonSchedule, QTable};
use crate::envcore::{
    derive_seed, rng_for, streams, AgentId, EnvError, Environment, JointAction, MessageVector,
};
use crate::par::Execution;
use crate::power::{cpr_shaping, LiveStep, PowerError, PowerEstimate, RegularizationConfig};
use crate::worlds::predator_prey::{PreyPolicy, STAY};
use crate::worlds::{EnvConfig, World};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: {0}")]
    Diverged(#[from] AcError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Power(#[from] PowerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Environment steps of cooperative training.
    pub total_steps: u64,
    /// Environment steps of adversary training (0 skips the phase).
    pub adversary_steps: u64,
    /// Whether the team keeps learning during the adversary phase.
    pub co_adapt: bool,
    pub gamma: f64,
    /// Tabular learning rate.
    pub alpha: f64,
    pub epsilon: EpsilonSchedule,
    /// Environment steps collected between actor-critic updates.
    pub batch_steps: usize,
    pub gae_lambda: f64,
    pub ac: AcConfig,
    pub hidden: usize,
    /// Graph filter taps for the GNN actor.
    pub hops: usize,
    pub share_parameters: bool,
    /// Give neural actors a learned communication gate; without it every
    /// agent always speaks.
    pub comm_gate: bool,
    /// Stop cooperative training once the success rate over the last
    /// `success_window` episodes reaches this value.
    pub success_gate: Option<f64>,
    pub success_window: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            adversary_steps: 0,
            co_adapt: false,
            gamma: 0.99,
            alpha: 0.1,
            epsilon: EpsilonSchedule::default(),
            batch_steps: 2048,
            gae_lambda: 0.95,
            ac: AcConfig::default(),
            hidden: 64,
            hops: 2,
            share_parameters: true,
            comm_gate: false,
            success_gate: None,
            success_window: 200,
        }
    }
}

impl TrainSchedule {
    /// Desk-scale defaults for each environment.
    pub fn default_for(env: &EnvConfig) -> Self {
        match env {
            EnvConfig::Rdbd(_) => Self::default(),
            EnvConfig::Pp(_) => Self {
                total_steps: 500_000,
                ..Self::default()
            },
            EnvConfig::Gc(_) => Self {
                total_steps: 300_000,
                ..Self::default()
            },
        }
    }
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub phase: u8,
    pub episode: u64,
    pub steps: u64,
    /// Unshaped team return of the learning agents.
    pub team_return: f64,
    pub length: u32,
    pub success: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    /// `(global step, estimate)` when power logging is on.
    pub power: Vec<(u64, PowerEstimate)>,
}

/// Fresh, untrained controllers for an environment.
pub fn init_policies(env_cfg: &EnvConfig, schedule: &TrainSchedule, seed: u64) -> PolicySet {
    let mut rng = rng_for(seed, streams::INIT, 0);
    let env = env_cfg.build();
    let n = env.n_agents();
    let message_dim = env.message_spec().dim();
    let gate = |n: Neural| {
        if schedule.comm_gate {
            n.with_gate()
        } else {
            n
        }
    };
    match env_cfg {
        EnvConfig::Rdbd(_) => PolicySet {
            controllers: vec![
                Controller::Tabular(QTable::new(env.n_actions(0))),
                Controller::Tabular(QTable::new(env.n_actions(1))),
                Controller::Scripted(Script::RdbdTruthful),
            ],
            assignment: vec![0, 1, 2],
            message_dim,
        },
        EnvConfig::Pp(c) => {
            let make = |rng: &mut ChaCha8Rng| {
                Controller::Neural(Box::new(gate(Neural::new_mlp(
                    c.observation_len(),
                    message_dim,
                    schedule.hidden,
                    env.n_actions(0),
                    rng,
                ))))
            };
            let n_team = if schedule.share_parameters {
                1
            } else {
                c.n_predators
            };
            let mut controllers: Vec<Controller> = (0..n_team).map(|_| make(&mut rng)).collect();
            controllers.push(Controller::Scripted(match c.prey_policy {
                PreyPolicy::Random => Script::UniformRandom,
                PreyPolicy::Static => Script::Stay(STAY),
            }));
            let mut assignment: Vec<usize> = (0..c.n_predators)
                .map(|i| if schedule.share_parameters { 0 } else { i })
                .collect();
            assignment.push(n_team);
            PolicySet {
                controllers,
                assignment,
                message_dim,
            }
        }
        EnvConfig::Gc(c) => {
            let make = |rng: &mut ChaCha8Rng| {
                Controller::Neural(Box::new(gate(Neural::new_gnn(
                    c.observation_len(),
                    message_dim,
                    schedule.hops,
                    schedule.hidden,
                    env.n_actions(0),
                    rng,
                ))))
            };
            let coop = env.cooperative_learners();
            let n_team = if schedule.share_parameters {
                1
            } else {
                coop.len()
            };
            let controllers: Vec<Controller> = (0..n_team).map(|_| make(&mut rng)).collect();
            // Adversaries act with the team's first controller until they
            // are given their own.
            let assignment = (0..n)
                .map(|a| match coop.iter().position(|&c| c == a) {
                    Some(k) if !schedule.share_parameters => k,
                    _ => 0,
                })
                .collect();
            PolicySet {
                controllers,
                assignment,
                message_dim,
            }
        }
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policies: PolicySet,
    pub log: TrainLog,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub exec: Execution,
    pub log_power: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            exec: Execution::Parallel,
            log_power: false,
        }
    }
}

/// Trains a team from scratch on `env_cfg`.
pub fn train(
    env_cfg: &EnvConfig,
    schedule: &TrainSchedule,
    reg: &RegularizationConfig,
    seed: u64,
    opts: TrainOptions,
) -> Result<TrainOutput, TrainError> {
    reg.validate()?;
    let mut policies = init_policies(env_cfg, schedule, seed);
    let mut env = env_cfg.build();
    let mut trainer = Trainer {
        schedule,
        reg,
        seed,
        opts,
        agent_rng: rng_for(seed, streams::AGENT, 0),
        train_rng: rng_for(seed, streams::TRAIN, 0),
        episode: 0,
        global_step: 0,
        log: TrainLog::default(),
    };
    let team = env.cooperative_learners();
    trainer.run_phase(
        &mut env,
        &mut policies,
        1,
        &team,
        schedule.total_steps,
        true,
    )?;

    let adversaries = env.adversaries();
    if schedule.adversary_steps > 0 && !adversaries.is_empty() {
        let base = policies.assignment[adversaries[0]];
        let idx = policies.controllers.len();
        policies
            .controllers
            .push(policies.controllers[base].clone());
        if let Controller::Neural(n) = &mut policies.controllers[idx] {
            n.actor_opt = None;
            n.critic_opt = None;
        }
        for &a in &adversaries {
            policies.assignment[a] = idx;
        }
        let mut learners = adversaries.clone();
        if schedule.co_adapt {
            learners.extend(&team);
        }
        trainer.run_phase(
            &mut env,
            &mut policies,
            2,
            &learners,
            schedule.adversary_steps,
            schedule.co_adapt,
        )?;
    }
    Ok(TrainOutput {
        policies,
        log: trainer.log,
    })
}

struct Trainer<'a> {
    schedule: &'a TrainSchedule,
    reg: &'a RegularizationConfig,
    seed: u64,
    opts: TrainOptions,
    agent_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    episode: u64,
    global_step: u64,
    log: TrainLog,
}

/// Per-agent experience within one episode.
#[derive(Default)]
struct AgentTrace {
    samples: Vec<AcSample>,
    rewards: Vec<f64>,
    values: Vec<f64>,
}

impl Trainer<'_> {
    fn run_phase(
        &mut self,
        env: &mut World,
        policies: &mut PolicySet,
        phase: u8,
        learners: &[AgentId],
        budget: u64,
        shape: bool,
    ) -> Result<(), TrainError> {
        let n = env.n_agents();
        let null = MessageVector::null(policies.message_dim);
        // Power logging runs the counterfactual sweeps even when λ = 0.
        let shaping = shape && (self.reg.is_active() || self.opts.log_power);
        let gamma = self.schedule.gamma;
        let mut phase_steps = 0u64;
        let mut since_update = 0usize;
        let mut live_buf: Vec<Vec<AcSample>> = vec![Vec::new(); policies.controllers.len()];
        let mut cf_buf: Vec<Vec<AcSample>> = vec![Vec::new(); policies.controllers.len()];
        let mut recent: std::collections::VecDeque<bool> = Default::default();

        while phase_steps < budget {
            env.reset(derive_seed(self.seed, streams::ENV, self.episode));
            let mut inbox = vec![null.clone(); n];
            let mut traces: Vec<AgentTrace> = (0..n).map(|_| AgentTrace::default()).collect();
            let mut team_return = 0.0;
            let mut length = 0u32;
            let success;
            let epsilon = self.schedule.epsilon.at(phase_steps, budget);
            loop {
                let obs = env.observations();
                let graph = env.comm_graph();
                let decisions: Vec<_> = (0..n)
                    .map(|i| {
                        let (u1, u2): (f64, f64) = (self.agent_rng.gen(), self.agent_rng.gen());
                        let mode = if learners.contains(&i) {
                            ActMode::Explore { epsilon }
                        } else {
                            ActMode::Evaluate
                        };
                        policies.decide(i, &obs[i], &inbox, &graph, mode, u1, u2)
                    })
                    .collect();
                let actions: Vec<usize> = decisions.iter().map(|d| d.action).collect();
                let outgoing: Vec<MessageVector> =
                    decisions.iter().map(|d| d.message.clone()).collect();
                let pre = shaping.then(|| env.clone());
                let res = env.step(&JointAction {
                    actions: actions.clone(),
                    messages: outgoing.clone(),
                })?;
                let mut rewards = res.rewards.clone();
                let mut cf_samples = Vec::new();
                if let Some(pre) = pre {
                    let live = LiveStep {
                        observations: &obs,
                        inbox: &inbox,
                        outgoing: &outgoing,
                        graph: &graph,
                        actions: &actions,
                    };
                    let shaped = cpr_shaping(
                        &pre,
                        &live,
                        &res.rewards,
                        &*policies,
                        self.reg,
                        gamma,
                        self.seed,
                        self.global_step,
                        self.opts.exec,
                        self.opts.log_power,
                    )?;
                    rewards = shaped.rewards;
                    cf_samples = shaped.samples;
                    if self.opts.log_power {
                        self.log
                            .power
                            .extend(shaped.estimates.into_iter().map(|e| (self.global_step, e)));
                    }
                }

                for &i in learners {
                    team_return += res.rewards[i];
                    match &mut policies.controllers[policies.assignment[i]] {
                        Controller::Tabular(q) => {
                            let key = tabular_key(i, &obs[i], &inbox, &graph);
                            let next_graph = env.comm_graph();
                            let next_key;
                            let next = if res.done {
                                None
                            } else {
                                next_key =
                                    tabular_key(i, &res.observations[i], &outgoing, &next_graph);
                                Some((&next_key, &res.observations[i].legal_actions[..]))
                            };
                            q_update(
                                q,
                                &key,
                                actions[i],
                                rewards[i],
                                next,
                                self.schedule.alpha,
                                gamma,
                            );
                        }
                        Controller::Neural(_) => {
                            let d = &decisions[i];
                            traces[i].samples.push(AcSample {
                                agent: i,
                                obs: obs[i].clone(),
                                inbox: inbox.clone(),
                                graph: graph.clone(),
                                action: d.action,
                                gate: d.gate,
                                old_logp: d.logp,
                                advantage: 0.0,
                                ret: 0.0,
                                weight: 1.0,
                                fit_critic: true,
                            });
                            traces[i].rewards.push(rewards[i]);
                            traces[i].values.push(d.value);
                        }
                        Controller::Scripted(_) => {}
                    }
                }
                for s in cf_samples {
                    if !learners.contains(&s.agent) {
                        continue;
                    }
                    let c = policies.assignment[s.agent];
                    if let Controller::Neural(net) = &policies.controllers[c] {
                        let (probs, _) = net.policy(s.agent, &s.observation, &s.inbox, &s.graph);
                        let v = net.value(s.agent, &s.observation, &s.inbox, &s.graph);
                        let boot = if s.done {
                            0.0
                        } else {
                            net.value(s.agent, &s.next_observation, &s.next_inbox, &s.next_graph)
                        };
                        let target = s.reward + gamma * boot;
                        cf_buf[c].push(AcSample {
                            agent: s.agent,
                            obs: s.observation,
                            inbox: s.inbox,
                            graph: s.graph,
                            action: s.action,
                            gate: None,
                            old_logp: probs[s.action].ln(),
                            advantage: target - v,
                            ret: target,
                            weight: self.reg.lambda,
                            fit_critic: true,
                        });
                    }
                }

                self.global_step += 1;
                phase_steps += 1;
                since_update += 1;
                length += 1;
                inbox = outgoing;
                if res.done {
                    success = res.info.get("success").is_some_and(|&s| s > 0.5)
                        || res.info.get("outcome").is_some_and(|&o| o == 1.0);
                    break;
                }
            }

            for i in 0..n {
                let t = std::mem::take(&mut traces[i]);
                if t.samples.is_empty() {
                    continue;
                }
                let mut values = t.values;
                values.push(0.0);
                let (adv, ret) = gae(&t.rewards, &values, gamma, self.schedule.gae_lambda);
                let c = policies.assignment[i];
                for ((mut s, a), r) in t.samples.into_iter().zip(adv).zip(ret) {
                    s.advantage = a;
                    s.ret = r;
                    live_buf[c].push(s);
                }
            }
            self.log.episodes.push(EpisodeLog {
                phase,
                episode: self.episode,
                steps: self.global_step,
                team_return,
                length,
                success,
            });
            self.episode += 1;
            recent.push_back(success);
            if recent.len() > self.schedule.success_window {
                recent.pop_front();
            }

            let finished = phase_steps >= budget;
            if since_update >= self.schedule.batch_steps || finished {
                since_update = 0;
                for c in 0..policies.controllers.len() {
                    let mut batch = std::mem::take(&mut live_buf[c]);
                    let cf = std::mem::take(&mut cf_buf[c]);
                    if batch.is_empty() {
                        continue;
                    }
                    normalize_advantages(&mut batch, cf);
                    if let Controller::Neural(net) = &mut policies.controllers[c] {
                        actor_critic_update(net, &batch, &self.schedule.ac, &mut self.train_rng)?;
                    }
                }
            }

            if phase == 1 {
                if let Some(gate) = self.schedule.success_gate {
                    let full = recent.len() >= self.schedule.success_window;
                    let rate = recent.iter().filter(|&&s| s).count() as f64 / recent.len() as f64;
                    if full && rate >= gate {
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Standardizes live advantages and rescales counterfactual ones by the
/// same factor, then appends the counterfactual samples to the batch.
fn normalize_advantages(batch: &mut Vec<AcSample>, cf: Vec<AcSample>) {
    let n = batch.len() as f64;
    let mean = batch.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = batch
        .iter()
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-8);
    for s in batch.iter_mut() {
        s.advantage = (s.advantage - mean) / std;
    }
    batch.extend(cf.into_iter().map(|mut s| {
        s.advantage /= std;
        s
    }));
}
