//! Test-time evaluation under the cooperative, no-communication and
//! adversarial-communication regimes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envcore::{
    derive_seed, rng_for, streams, AgentId, Environment, JointAction, MessageVector,
};
use crate::learners::{ActMode, Controller, PolicySet};
use crate::par::{self, Execution};
use crate::power::{adversarial_substitution, AdversarialSearch, LiveStep, MinimizeBy};
use crate::worlds::{rdbd, EnvConfig, World};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Coop,
    NoComm,
    AdvComm,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Coop => "coop",
            Regime::NoComm => "no_comm",
            Regime::AdvComm => "adv_comm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Regime::Coop, Regime::NoComm, Regime::AdvComm]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub trials: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Probability of an adversarial red agent in RDBD's adversarial regime.
    pub rdbd_adversarial_prob: f64,
    pub search: AdversarialSearch,
    pub minimize_by: MinimizeBy,
    pub gamma: f64,
    pub exec: Execution,
}

impl EvalSettings {
    pub fn new(trials: usize, seed: u64, regime: Regime) -> Self {
        Self {
            trials,
            seed,
            regime,
            rdbd_adversarial_prob: 0.5,
            search: AdversarialSearch::Exhaustive,
            minimize_by: MinimizeBy::Reward,
            gamma: 0.99,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub episode: u64,
    /// Per-agent undiscounted returns.
    pub returns: Vec<f64>,
    /// The score reported for the episode (see [`reported_agent`]).
    pub score: f64,
    pub success: bool,
    pub length: u32,
    pub coverage_pct: Option<f64>,
    /// True when every message delivered during the episode was NULL.
    pub all_messages_null: bool,
}

/// Agent whose return is reported, or `None` for a team score.
pub fn reported_agent(env: &EnvConfig) -> Option<AgentId> {
    match env {
        EnvConfig::Rdbd(_) => Some(rdbd::BLUE),
        _ => None,
    }
}

fn team_score(world: &World, returns: &[f64]) -> f64 {
    match world {
        World::Rdbd(_) => returns[rdbd::BLUE],
        World::Pp(_) | World::Gc(_) => world
            .cooperative_learners()
            .iter()
            .map(|&a| returns[a])
            .sum(),
    }
}

/// Environment prepared for a regime.
pub fn regime_world(env_cfg: &EnvConfig, settings: &EvalSettings) -> World {
    let mut world = env_cfg.build();
    if let World::Rdbd(e) = &mut world {
        let p = match settings.regime {
            Regime::AdvComm => settings.rdbd_adversarial_prob,
            Regime::Coop | Regime::NoComm => 0.0,
        };
        e.set_adversarial_prob(p);
    }
    world
}

/// Plays one evaluation episode.
pub fn run_episode(
    template: &World,
    policies: &PolicySet,
    settings: &EvalSettings,
    episode: u64,
) -> Result<EpisodeResult, HarnessError> {
    let mut env = template.clone();
    let n = env.n_agents();
    if policies.n_agents() != n {
        return Err(HarnessError::CheckpointMismatch(format!(
            "policy set covers {} agents, environment has {n}",
            policies.n_agents()
        )));
    }
    let ep_seed = derive_seed(settings.seed, streams::EVAL, episode);
    let mut rng = rng_for(ep_seed, streams::AGENT, 0);
    let mut adv_rng = rng_for(ep_seed, streams::COUNTERFACTUAL, 0);
    env.reset(ep_seed);
    let null = MessageVector::null(policies.message_dim);
    let no_comm = settings.regime == Regime::NoComm;
    let channels = if settings.regime == Regime::AdvComm {
        env.adversarial_channels()
    } else {
        Vec::new()
    };
    let victims = env.channel_victims();
    let mut inbox = vec![null.clone(); n];
    let mut returns = vec![0.0; n];
    let mut length = 0u32;
    let mut all_null = true;
    let info;
    loop {
        let obs = env.observations();
        let graph = env.comm_graph();
        let decisions: Vec<_> = (0..n)
            .map(|i| {
                let u: f64 = rng.gen();
                policies.decide(i, &obs[i], &inbox, &graph, ActMode::Evaluate, 1.0, u)
            })
            .collect();
        let mut actions: Vec<usize> = decisions.iter().map(|d| d.action).collect();
        let outgoing: Vec<MessageVector> = if no_comm {
            vec![null.clone(); n]
        } else {
            decisions.iter().map(|d| d.message.clone()).collect()
        };
        for &j in &channels {
            let live = LiveStep {
                observations: &obs,
                inbox: &inbox,
                outgoing: &outgoing,
                graph: &graph,
                actions: &actions,
            };
            let sub = adversarial_substitution(
                &env,
                &live,
                &victims,
                j,
                policies,
                settings.search,
                settings.minimize_by,
                false,
                settings.gamma,
                &mut adv_rng,
            )?;
            inbox[j] = sub.message;
            actions = sub.outcome.actions;
        }
        all_null &= inbox.iter().all(MessageVector::is_null);
        let res = env.step(&JointAction {
            actions,
            messages: outgoing.clone(),
        })?;
        for (acc, r) in returns.iter_mut().zip(&res.rewards) {
            *acc += r;
        }
        length += 1;
        inbox = outgoing;
        if res.done {
            info = res.info;
            break;
        }
    }
    let success = match &env {
        World::Rdbd(_) => info.get("outcome") == Some(&1.0),
        World::Pp(_) => info.get("success") == Some(&1.0),
        World::Gc(g) => g.covered().count() == g.free_cells(),
    };
    let coverage_pct = match &env {
        World::Gc(g) => Some(g.coverage_pct()),
        _ => None,
    };
    Ok(EpisodeResult {
        seed: settings.seed,
        episode,
        score: team_score(&env, &returns),
        returns,
        success,
        length,
        coverage_pct,
        all_messages_null: all_null,
    })
}

/// Runs `settings.trials` episodes, in parallel when enabled, returning them
/// in episode order.
pub fn evaluate(
    env_cfg: &EnvConfig,
    policies: &PolicySet,
    settings: &EvalSettings,
) -> Result<Vec<EpisodeResult>, HarnessError> {
    let world = regime_world(env_cfg, settings);
    par::map_range(settings.exec, settings.trials, |e| {
        run_episode(&world, policies, settings, e as u64)
    })
    .into_iter()
    .collect()
}

/// Instantiates a trained grid-coverage team on a different composition.
/// The team must share one controller; adversaries use their own controller
/// when one was trained, otherwise the team's.
pub fn scale_policies(
    policies: &PolicySet,
    trained: &EnvConfig,
    target: &EnvConfig,
) -> Result<PolicySet, HarnessError> {
    let (EnvConfig::Gc(from), EnvConfig::Gc(to)) = (trained, target) else {
        return Err(HarnessError::CheckpointNotScalable(trained.name().into()));
    };
    if from.observation_len() != to.observation_len() || from.message_dim != to.message_dim {
        return Err(HarnessError::CheckpointNotScalable(
            "observation or message dimensions differ".into(),
        ));
    }
    let world = trained.build();
    let coop = world.cooperative_learners();
    let team = policies.assignment[coop[0]];
    if coop.iter().any(|&a| policies.assignment[a] != team) {
        return Err(HarnessError::CheckpointNotScalable(
            "team does not share parameters".into(),
        ));
    }
    let adv = world
        .adversaries()
        .first()
        .map_or(team, |&a| policies.assignment[a]);
    if !matches!(policies.controllers[team], Controller::Neural(_)) {
        return Err(HarnessError::CheckpointNotScalable(
            "team is not neural".into(),
        ));
    }
    let target_world = target.build();
    let target_adv = target_world.adversaries();
    let assignment = (0..target_world.n_agents())
        .map(|a| if target_adv.contains(&a) { adv } else { team })
        .collect();
    Ok(PolicySet {
        controllers: policies.controllers.clone(),
        assignment,
        message_dim: policies.message_dim,
    })
}
