//! Power estimates and CPR reward shaping.
//!
//! Power measures how far an influencer can push a victim's value below its
//! on-policy level. Standard power varies only the influencer's action;
//! communicative power varies action and message jointly. Training adds
//! `λ · adv_r` to the victim's reward, where `adv_r` is the reward the victim
//! would have received had its strongest influencer played the minimizing
//! action and message this step.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commnet::GraphShiftOperator;
use crate::envcore::{
    rng_for, streams, AgentId, AgentObservation, EnvError, Environment, JointAction, MessageSpec,
    MessageVector,
};
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("influencer action set is empty")]
    EmptyActionSet,
    #[error("message alphabet is empty")]
    EmptyAlphabet,
    #[error("no influencers: power is undefined for a single agent")]
    NoInfluencers,
    #[error("environment does not support counterfactual snapshots")]
    SnapshotUnsupported,
    #[error("invalid regularization config: {0}")]
    InvalidConfig(String),
    #[error("counterfactual step failed: {0}")]
    Env(#[from] EnvError),
}

/// Value of a victim's configuration as a function of the influencer's
/// action and the message delivered from the influencer. Everything else
/// (victim observation, other messages, victim action) is fixed by the
/// oracle's construction.
pub trait QOracle {
    fn q(&self, influencer_action: usize, message: &MessageVector) -> f64;
}

impl<F> QOracle for F
where
    F: Fn(usize, &MessageVector) -> f64,
{
    fn q(&self, influencer_action: usize, message: &MessageVector) -> f64 {
        self(influencer_action, message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub victim: AgentId,
    pub influencer: AgentId,
    pub standard: f64,
    pub communication: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialSearch {
    /// Every (action, alphabet message) pair; continuous channels fall back
    /// to the default sample size.
    #[default]
    Exhaustive,
    Sampled(usize),
}

/// What the adversarial substitution minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimizeBy {
    /// The victim's counterfactual immediate reward.
    #[default]
    Reward,
    /// Immediate reward plus the discounted critic value of the next input.
    Critic,
}

pub const DEFAULT_CONTINUOUS_CANDIDATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    pub lambda: f64,
    pub k_steps: u32,
    pub adversarial_search: AdversarialSearch,
    /// Separate weights for the standard and communication components.
    pub split_lambdas: Option<(f64, f64)>,
    pub minimize_by: MinimizeBy,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            k_steps: 1,
            adversarial_search: AdversarialSearch::Exhaustive,
            split_lambdas: None,
            minimize_by: MinimizeBy::Reward,
        }
    }
}

impl RegularizationConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(PowerError::InvalidConfig(format!(
                "lambda must be a finite value >= 0, got {}",
                self.lambda
            )));
        }
        if let Some((s, c)) = self.split_lambdas {
            if !(s.is_finite() && c.is_finite() && s >= 0.0 && c >= 0.0) {
                return Err(PowerError::InvalidConfig(format!(
                    "split_lambdas must be finite and >= 0, got ({s}, {c})"
                )));
            }
        }
        if self.k_steps != 1 {
            return Err(PowerError::InvalidConfig(format!(
                "k_steps must be 1, got {}",
                self.k_steps
            )));
        }
        if self.adversarial_search == AdversarialSearch::Sampled(0) {
            return Err(PowerError::InvalidConfig(
                "adversarial_search sample size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// (standard weight, communication weight).
    pub fn weights(&self) -> (f64, f64) {
        self.split_lambdas.unwrap_or((self.lambda, self.lambda))
    }

    /// False exactly when shaping is a no-op.
    pub fn is_active(&self) -> bool {
        let (s, c) = self.weights();
        s != 0.0 || c != 0.0
    }
}

/// On-policy value minus the worst value over the influencer's actions with
/// the message held at its on-policy value.
pub fn standard_power(
    q: &impl QOracle,
    influencer_actions: &[usize],
    on_action: usize,
    on_message: &MessageVector,
) -> Result<f64, PowerError> {
    if influencer_actions.is_empty() {
        return Err(PowerError::EmptyActionSet);
    }
    let on = q.q(on_action, on_message);
    let worst = influencer_actions
        .iter()
        .map(|&a| q.q(a, on_message))
        .fold(on, f64::min);
    Ok(on - worst)
}

/// Joint minimization over (action, message) substitutions. The on-policy
/// message is always part of the search, so `total >= standard`.
pub fn communicative_power(
    q: &impl QOracle,
    victim: AgentId,
    influencer: AgentId,
    influencer_actions: &[usize],
    alphabet: &[MessageVector],
    on_action: usize,
    on_message: &MessageVector,
) -> Result<PowerEstimate, PowerError> {
    if alphabet.is_empty() {
        return Err(PowerError::EmptyAlphabet);
    }
    let standard = standard_power(q, influencer_actions, on_action, on_message)?;
    let on = q.q(on_action, on_message);
    let mut worst = on - standard;
    for m in alphabet {
        for &a in influencer_actions {
            worst = worst.min(q.q(a, m));
        }
    }
    let total = on - worst;
    Ok(PowerEstimate {
        victim,
        influencer,
        standard,
        communication: total - standard,
        total,
    })
}

/// Negative of the strongest influence on one victim.
pub fn power_reward(estimates: &[PowerEstimate]) -> Result<f64, PowerError> {
    estimates
        .iter()
        .map(|e| e.total)
        .reduce(f64::max)
        .map(|m| -m)
        .ok_or(PowerError::NoInfluencers)
}

pub fn shape_reward(r: f64, lambda: f64, adv_r: f64) -> f64 {
    r + lambda * adv_r
}

/// Candidate messages for the adversarial search. The on-policy message is
/// always included (appended last when it is not already a candidate).
///
/// Continuous channels get `NULL`, the positive and negative extremes of two
/// random basis directions, and uniform draws from the payload box, `n` in
/// total.
pub fn message_candidates(
    spec: &MessageSpec,
    on_policy: &MessageVector,
    search: AdversarialSearch,
    rng: &mut impl Rng,
) -> Vec<MessageVector> {
    let mut out: Vec<MessageVector> = match spec {
        MessageSpec::Discrete { alphabet } => match search {
            AdversarialSearch::Sampled(n) if n < alphabet.len() => {
                rand::seq::index::sample(rng, alphabet.len(), n)
                    .into_iter()
                    .map(|i| alphabet[i].clone())
                    .collect()
            }
            _ => alphabet.clone(),
        },
        MessageSpec::Continuous { dim, low, high } => {
            let n = match search {
                AdversarialSearch::Sampled(n) => n,
                AdversarialSearch::Exhaustive => DEFAULT_CONTINUOUS_CANDIDATES,
            };
            let mut c = vec![MessageVector::null(*dim)];
            if *dim > 0 {
                for _ in 0..2 {
                    let axis = rng.gen_range(0..*dim);
                    for extreme in [*high, *low] {
                        let mut p = vec![0.0; *dim];
                        p[axis] = extreme;
                        c.push(MessageVector::new(p));
                    }
                }
            }
            while c.len() < n {
                c.push(MessageVector::new(
                    (0..*dim).map(|_| rng.gen_range(*low..=*high)).collect(),
                ));
            }
            c.truncate(n.max(1));
            c
        }
    };
    if !out.contains(on_policy) {
        out.push(on_policy.clone());
    }
    out
}

/// The part of a policy the counterfactual machinery needs: how an agent
/// would act on a different inbox, and what it thinks an input is worth.
pub trait ReceiverModel: Sync {
    /// Action taken on `inbox`; `u` in [0, 1) is a common random number so
    /// that stochastic policies are compared on equal footing.
    fn counterfactual_action(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
        u: f64,
    ) -> usize;

    fn value(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> f64;
}

/// One live decision point: what every agent saw and did.
#[derive(Debug, Clone, Copy)]
pub struct LiveStep<'a> {
    pub observations: &'a [AgentObservation],
    /// Messages delivered this step (sent on the previous step).
    pub inbox: &'a [MessageVector],
    /// Messages sent this step.
    pub outgoing: &'a [MessageVector],
    pub graph: &'a GraphShiftOperator,
    pub actions: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct CounterfactualOutcome {
    pub influencer_action: usize,
    pub message_index: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<AgentObservation>,
    pub next_graph: GraphShiftOperator,
    pub done: bool,
}

/// Every substitution tried for one influencer at one live step. Outcomes
/// are stored message-major: index `m * actions.len() + a`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub influencer: AgentId,
    pub actions: Vec<usize>,
    pub candidates: Vec<MessageVector>,
    pub on_action: usize,
    pub on_message_index: usize,
    pub outcomes: Vec<CounterfactualOutcome>,
}

impl Sweep {
    pub fn outcome(&self, message_index: usize, action_pos: usize) -> &CounterfactualOutcome {
        &self.outcomes[message_index * self.actions.len() + action_pos]
    }

    /// Inbox the victims would have seen under candidate `message_index`.
    pub fn inbox_for(&self, live: &LiveStep<'_>, message_index: usize) -> Vec<MessageVector> {
        let mut inbox = live.inbox.to_vec();
        inbox[self.influencer] = self.candidates[message_index].clone();
        inbox
    }

    /// Criterion value of an outcome for a set of victims (summed).
    pub fn criterion<M: ReceiverModel>(
        &self,
        o: &CounterfactualOutcome,
        victims: &[AgentId],
        by: MinimizeBy,
        model: &M,
        next_inbox: &[MessageVector],
        gamma: f64,
    ) -> f64 {
        victims
            .iter()
            .map(|&v| match by {
                MinimizeBy::Reward => o.rewards[v],
                MinimizeBy::Critic => {
                    let boot = if o.done {
                        0.0
                    } else {
                        model.value(v, &o.next_observations[v], next_inbox, &o.next_graph)
                    };
                    o.rewards[v] + gamma * boot
                }
            })
            .sum()
    }

    /// Index of the minimizing outcome. Ties go to the lowest action, then
    /// the lowest message index.
    pub fn argmin(&self, values: &[f64], restrict_to_on_message: bool) -> usize {
        let na = self.actions.len();
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (idx, &v) in values.iter().enumerate() {
            let (m, a) = (idx / na, idx % na);
            if restrict_to_on_message && m != self.on_message_index {
                continue;
            }
            let key = (v, self.actions[a], m, idx);
            let better = match best {
                None => true,
                Some((bv, ba, bm, _)) => v < bv || (v == bv && (key.1, key.2) < (ba, bm)),
            };
            if better {
                best = Some(key);
            }
        }
        best.map(|b| b.3)
            .expect("sweep has at least the on-policy outcome")
    }

    /// Power estimate for one victim, using the per-outcome values as a
    /// tabular oracle.
    pub fn estimate(&self, victim: AgentId, values: &[f64]) -> Result<PowerEstimate, PowerError> {
        let na = self.actions.len();
        let oracle = |a: usize, m: &MessageVector| {
            let mi = self
                .candidates
                .iter()
                .position(|c| c == m)
                .expect("oracle queried with a candidate message");
            let ai = self
                .actions
                .iter()
                .position(|&x| x == a)
                .expect("oracle queried with a swept action");
            values[mi * na + ai]
        };
        communicative_power(
            &oracle,
            victim,
            self.influencer,
            &self.actions,
            &self.candidates,
            self.on_action,
            &self.candidates[self.on_message_index],
        )
    }
}

/// Re-steps snapshots of `env` under every substitution of `influencer`'s
/// action (when `vary_action`) and delivered message. Agents receiving from
/// the influencer re-derive their actions under the substituted inbox; the
/// on-policy message keeps the live actions. The live environment is never
/// touched. The on-policy message is appended to `candidates` if missing.
#[allow(clippy::too_many_arguments)]
pub fn sweep<E: Environment, M: ReceiverModel>(
    env: &E,
    live: &LiveStep<'_>,
    influencer: AgentId,
    model: &M,
    mut candidates: Vec<MessageVector>,
    vary_action: bool,
    uniforms: &[f64],
) -> Result<Sweep, PowerError> {
    let on_action = live.actions[influencer];
    let on_message_index = match candidates.iter().position(|c| *c == live.inbox[influencer]) {
        Some(i) => i,
        None => {
            candidates.push(live.inbox[influencer].clone());
            candidates.len() - 1
        }
    };
    let actions = if vary_action {
        live.observations[influencer].legal_actions.clone()
    } else {
        vec![on_action]
    };
    if actions.is_empty() {
        return Err(PowerError::EmptyActionSet);
    }
    let receivers: Vec<AgentId> = (0..live.actions.len())
        .filter(|&r| r != influencer && live.graph.connected(r, influencer))
        .collect();
    let mut outcomes = Vec::with_capacity(candidates.len() * actions.len());
    for (mi, m) in candidates.iter().enumerate() {
        let mut joint_actions = live.actions.to_vec();
        if mi != on_message_index {
            let mut inbox = live.inbox.to_vec();
            inbox[influencer] = m.clone();
            for &r in &receivers {
                joint_actions[r] = model.counterfactual_action(
                    r,
                    &live.observations[r],
                    &inbox,
                    live.graph,
                    uniforms[r],
                );
            }
        }
        for &a in &actions {
            joint_actions[influencer] = a;
            let mut cf = env.snapshot().ok_or(PowerError::SnapshotUnsupported)?;
            let joint = JointAction {
                actions: joint_actions.clone(),
                messages: live.outgoing.to_vec(),
            };
            let res = cf.step(&joint)?;
            outcomes.push(CounterfactualOutcome {
                influencer_action: a,
                message_index: mi,
                actions: joint_actions.clone(),
                rewards: res.rewards,
                next_observations: res.observations,
                next_graph: cf.comm_graph(),
                done: res.done,
            });
        }
    }
    Ok(Sweep {
        influencer,
        actions,
        candidates,
        on_action,
        on_message_index,
        outcomes,
    })
}

/// The minimizing substitution found for one influencer.
#[derive(Debug, Clone)]
pub struct Substitution {
    pub action: usize,
    pub message: MessageVector,
    pub adv_r: f64,
    pub outcome: CounterfactualOutcome,
}

/// Searches `influencer`'s substitutions for the one minimizing the summed
/// criterion of `victims`, and reports the victims' summed counterfactual
/// immediate reward under it.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_substitution<E: Environment, M: ReceiverModel>(
    env: &E,
    live: &LiveStep<'_>,
    victims: &[AgentId],
    influencer: AgentId,
    model: &M,
    search: AdversarialSearch,
    minimize_by: MinimizeBy,
    vary_action: bool,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<Substitution, PowerError> {
    let candidates = message_candidates(&env.message_spec(), &live.inbox[influencer], search, rng);
    let uniforms: Vec<f64> = (0..live.actions.len()).map(|_| rng.gen()).collect();
    let sw = sweep(
        env,
        live,
        influencer,
        model,
        candidates,
        vary_action,
        &uniforms,
    )?;
    let values: Vec<f64> = sw
        .outcomes
        .iter()
        .map(|o| sw.criterion(o, victims, minimize_by, model, live.outgoing, gamma))
        .collect();
    let best = sw.argmin(&values, false);
    let o = sw.outcomes[best].clone();
    Ok(Substitution {
        action: o.influencer_action,
        message: sw.candidates[o.message_index].clone(),
        adv_r: victims.iter().map(|&v| o.rewards[v]).sum(),
        outcome: o,
    })
}

/// A victim's experience under the minimizing substitution, for the
/// counterfactual policy-gradient term.
#[derive(Debug, Clone)]
pub struct CounterfactualSample {
    pub agent: AgentId,
    pub observation: AgentObservation,
    pub inbox: Vec<MessageVector>,
    pub graph: GraphShiftOperator,
    pub action: usize,
    pub reward: f64,
    pub next_observation: AgentObservation,
    pub next_inbox: Vec<MessageVector>,
    pub next_graph: GraphShiftOperator,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ShapingOutcome {
    /// Rewards after shaping; unregularized agents keep their live reward.
    pub rewards: Vec<f64>,
    /// Per agent, the counterfactual reward added (None if unregularized).
    pub adv_rewards: Vec<Option<f64>>,
    pub samples: Vec<CounterfactualSample>,
    pub estimates: Vec<PowerEstimate>,
}

/// Shapes one live step's rewards. For each regularized victim the strongest
/// influencer (lowest adversarial reward, ties to the lowest id) supplies
/// `adv_r`. `cf_index` selects an independent counterfactual RNG stream.
/// With an inactive regularizer the rewards pass through unchanged and only
/// power estimates are computed, if requested.
#[allow(clippy::too_many_arguments)]
pub fn cpr_shaping<E: Environment, M: ReceiverModel>(
    env: &E,
    live: &LiveStep<'_>,
    rewards: &[f64],
    model: &M,
    cfg: &RegularizationConfig,
    gamma: f64,
    seed: u64,
    cf_index: u64,
    exec: Execution,
    log_power: bool,
) -> Result<ShapingOutcome, PowerError> {
    let n = rewards.len();
    let mut out = ShapingOutcome {
        rewards: rewards.to_vec(),
        adv_rewards: vec![None; n],
        ..ShapingOutcome::default()
    };
    let active = cfg.is_active();
    if !active && !log_power {
        return Ok(out);
    }
    let victims = env.regularized_agents();
    if victims.is_empty() {
        return Ok(out);
    }
    if n < 2 {
        return Err(PowerError::NoInfluencers);
    }
    let spec = env.message_spec();
    let influencers: Vec<AgentId> = (0..n)
        .filter(|&j| victims.iter().any(|&v| v != j))
        .collect();
    let sweeps = par::map(exec, &influencers, |&j| {
        let mut rng = rng_for(
            seed,
            streams::COUNTERFACTUAL,
            cf_index * n as u64 + j as u64,
        );
        let has_receivers = (0..n).any(|r| r != j && live.graph.connected(r, j));
        let candidates = if has_receivers {
            message_candidates(&spec, &live.inbox[j], cfg.adversarial_search, &mut rng)
        } else {
            vec![live.inbox[j].clone()]
        };
        let uniforms: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        sweep(env, live, j, model, candidates, true, &uniforms)
    });
    let sweeps = sweeps.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (w_std, w_comm) = cfg.weights();

    for &v in &victims {
        // (adv_total, adv_std, sweep index, outcome index)
        let mut strongest: Option<(f64, f64, usize, usize)> = None;
        for (si, sw) in sweeps.iter().enumerate() {
            if sw.influencer == v {
                continue;
            }
            let values: Vec<f64> = sw
                .outcomes
                .iter()
                .map(|o| sw.criterion(o, &[v], cfg.minimize_by, model, live.outgoing, gamma))
                .collect();
            let best = sw.argmin(&values, false);
            let best_std = sw.argmin(&values, true);
            let adv_total = sw.outcomes[best].rewards[v];
            let adv_std = sw.outcomes[best_std].rewards[v];
            if strongest.is_none_or(|s| adv_total < s.0) {
                strongest = Some((adv_total, adv_std, si, best));
            }
            if log_power {
                let q: Vec<f64> = sw
                    .outcomes
                    .iter()
                    .map(|o| sw.criterion(o, &[v], MinimizeBy::Critic, model, live.outgoing, gamma))
                    .collect();
                out.estimates.push(sw.estimate(v, &q)?);
            }
        }
        let Some((adv_total, adv_std, si, oi)) = strongest else {
            continue;
        };
        if !active {
            continue;
        }
        out.rewards[v] = if w_std == w_comm {
            shape_reward(rewards[v], w_std, adv_total)
        } else {
            rewards[v] + w_std * adv_std + w_comm * (adv_total - adv_std)
        };
        out.adv_rewards[v] = Some(adv_total);

        let sw = &sweeps[si];
        let o = &sw.outcomes[oi];
        let victim_rederived =
            o.message_index != sw.on_message_index && live.graph.connected(v, sw.influencer);
        if victim_rederived {
            out.samples.push(CounterfactualSample {
                agent: v,
                observation: live.observations[v].clone(),
                inbox: sw.inbox_for(live, o.message_index),
                graph: live.graph.clone(),
                action: o.actions[v],
                reward: o.rewards[v],
                next_observation: o.next_observations[v].clone(),
                next_inbox: live.outgoing.to_vec(),
                next_graph: o.next_graph.clone(),
                done: o.done,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::rdbd::{self, Rdbd, RdbdConfig, BLUE, COMM, OPEN_BLUE, OPEN_RED, RED, WAIT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(bit: usize) -> MessageVector {
        rdbd::encode_bit(bit)
    }

    #[test]
    fn standard_power_examples() {
        let flat = |_: usize, _: &MessageVector| 3.0;
        assert_eq!(standard_power(&flat, &[0, 1, 2], 1, &m(0)).unwrap(), 0.0);
        let table = |a: usize, _: &MessageVector| if a == 0 { 1.0 } else { 0.2 };
        let rho = standard_power(&table, &[0, 1], 0, &m(0)).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        assert!(matches!(
            standard_power(&table, &[], 0, &m(0)),
            Err(PowerError::EmptyActionSet)
        ));
    }

    #[test]
    fn singleton_alphabet_has_no_communication_component() {
        let table = |a: usize, _: &MessageVector| [0.7, 0.1, 0.4][a];
        let e = communicative_power(&table, 1, 0, &[0, 1, 2], &[m(1)], 0, &m(1)).unwrap();
        assert_eq!(e.communication, 0.0);
        assert_eq!(e.total, e.standard);
        assert!(matches!(
            communicative_power(&table, 1, 0, &[0], &[], 0, &m(1)),
            Err(PowerError::EmptyAlphabet)
        ));
    }

    #[test]
    fn message_flip_adds_communication_power() {
        // Flipping the bit costs more than any action substitution.
        let q = |a: usize, msg: &MessageVector| {
            let base = if a == 0 { 1.0 } else { 0.6 };
            if *msg == m(0) {
                base - 1.5
            } else {
                base
            }
        };
        let e = communicative_power(&q, 1, 2, &[0, 1], &[m(0), m(1)], 0, &m(1)).unwrap();
        assert!((e.standard - 0.4).abs() < 1e-12);
        assert!((e.total - 1.9).abs() < 1e-12);
        assert_eq!(e.total - e.standard, e.communication);
    }

    #[test]
    fn power_reward_examples() {
        let est = |total: f64| PowerEstimate {
            victim: 0,
            influencer: 1,
            standard: total,
            communication: 0.0,
            total,
        };
        assert_eq!(power_reward(&[est(0.2), est(0.5)]).unwrap(), -0.5);
        assert_eq!(power_reward(&[est(0.0), est(0.0)]).unwrap(), 0.0);
        assert_eq!(power_reward(&[est(0.8)]).unwrap(), -0.8);
        assert!(matches!(power_reward(&[]), Err(PowerError::NoInfluencers)));
    }

    #[test]
    fn shape_reward_examples() {
        assert_eq!(shape_reward(0.3, 0.0, -5.0), 0.3);
        assert!((shape_reward(1.0, 0.75, -1.0) - 0.25).abs() < 1e-12);
        assert!((shape_reward(0.5, 0.25, 0.5) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(RegularizationConfig::with_lambda(0.3).validate().is_ok());
        assert!(RegularizationConfig::with_lambda(-0.1).validate().is_err());
        let k2 = RegularizationConfig {
            k_steps: 2,
            ..RegularizationConfig::default()
        };
        assert!(k2.validate().is_err());
        assert!(!RegularizationConfig::default().is_active());
    }

    #[test]
    fn candidate_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = MessageSpec::Discrete {
            alphabet: rdbd::message_alphabet(),
        };
        let c = message_candidates(
            &spec,
            &MessageVector::null(2),
            AdversarialSearch::Exhaustive,
            &mut rng,
        );
        assert_eq!(c, vec![m(0), m(1), MessageVector::null(2)]);
        let c = message_candidates(&spec, &m(1), AdversarialSearch::Exhaustive, &mut rng);
        assert_eq!(c.len(), 2);

        let spec = MessageSpec::Continuous {
            dim: 16,
            low: -1.0,
            high: 1.0,
        };
        let on = MessageVector::new(vec![0.3; 16]);
        let c = message_candidates(&spec, &on, AdversarialSearch::Sampled(8), &mut rng);
        assert_eq!(c.len(), 9);
        assert!(c[0].is_null());
        assert_eq!(c.last(), Some(&on));
        assert!(c
            .iter()
            .all(|v| v.payload.iter().all(|x| (-1.0..=1.0).contains(x))));
    }

    /// Blue trusts the bit: open its own door on 1, open red's door on 0.
    struct TrustingBlue;

    impl ReceiverModel for TrustingBlue {
        fn counterfactual_action(
            &self,
            agent: AgentId,
            obs: &AgentObservation,
            inbox: &[MessageVector],
            _graph: &GraphShiftOperator,
            _u: f64,
        ) -> usize {
            if agent != BLUE || !obs.is_legal(OPEN_BLUE) {
                return WAIT;
            }
            match rdbd::decode_bit(&inbox[COMM]) {
                Some(1) => OPEN_BLUE,
                _ => OPEN_RED,
            }
        }

        fn value(
            &self,
            _agent: AgentId,
            _obs: &AgentObservation,
            _inbox: &[MessageVector],
            _graph: &GraphShiftOperator,
        ) -> f64 {
            0.0
        }
    }

    /// RDBD after the communication round, cooperative red, truthful bit.
    fn rdbd_after_comm_round(intent: rdbd::Intent) -> (Rdbd, Vec<MessageVector>) {
        let mut env = Rdbd::new(RdbdConfig::default());
        env.reset(5);
        env.force_intent(intent);
        let sent = vec![MessageVector::null(2), MessageVector::null(2), m(1)];
        env.step(&JointAction {
            actions: vec![WAIT; 3],
            messages: sent.clone(),
        })
        .unwrap();
        (env, sent)
    }

    #[test]
    fn rdbd_shaping_penalizes_the_trusting_step() {
        let (env, inbox) = rdbd_after_comm_round(rdbd::Intent::Cooperative);
        let obs = env.observations();
        let graph = env.comm_graph();
        let outgoing = vec![MessageVector::null(2), MessageVector::null(2), m(1)];
        let actions = vec![OPEN_RED, OPEN_BLUE, WAIT];
        let live = LiveStep {
            observations: &obs,
            inbox: &inbox,
            outgoing: &outgoing,
            graph: &graph,
            actions: &actions,
        };
        let mut live_env = env.clone();
        let res = live_env
            .step(&JointAction {
                actions: actions.clone(),
                messages: outgoing.clone(),
            })
            .unwrap();
        assert_eq!(res.rewards[BLUE], 1.0);

        let cfg = RegularizationConfig::with_lambda(0.75);
        let shaped = cpr_shaping(
            &env,
            &live,
            &res.rewards,
            &TrustingBlue,
            &cfg,
            0.99,
            3,
            0,
            Execution::Sequential,
            true,
        )
        .unwrap();
        // Red withholding its door is the strongest influence: -1.
        assert_eq!(shaped.adv_rewards[BLUE], Some(-1.0));
        assert!((shaped.rewards[BLUE] - 0.25).abs() < 1e-12);
        assert_eq!(shaped.rewards[RED], res.rewards[RED]);
        assert_eq!(shaped.rewards[COMM], res.rewards[COMM]);
        // The live environment is untouched by the counterfactuals.
        assert_eq!(env.state().t, 1);
        for e in &shaped.estimates {
            assert_eq!(e.total - e.standard, e.communication);
            assert!(e.standard >= 0.0);
        }

        let off = RegularizationConfig::with_lambda(0.0);
        let same = cpr_shaping(
            &env,
            &live,
            &res.rewards,
            &TrustingBlue,
            &off,
            0.99,
            3,
            0,
            Execution::Sequential,
            false,
        )
        .unwrap();
        assert_eq!(same.rewards, res.rewards);
    }

    #[test]
    fn adversarial_message_misleads_trusting_blue() {
        let (env, inbox) = rdbd_after_comm_round(rdbd::Intent::Adversarial);
        let obs = env.observations();
        let graph = env.comm_graph();
        let outgoing = vec![MessageVector::null(2); 3];
        // Adversarial red waits; truthful channel would have said 0.
        let inbox_truth = {
            let mut i = inbox.clone();
            i[COMM] = m(0);
            i
        };
        let actions = vec![WAIT, OPEN_RED, WAIT];
        let live = LiveStep {
            observations: &obs,
            inbox: &inbox_truth,
            outgoing: &outgoing,
            graph: &graph,
            actions: &actions,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sub = adversarial_substitution(
            &env,
            &live,
            &[BLUE],
            COMM,
            &TrustingBlue,
            AdversarialSearch::Exhaustive,
            MinimizeBy::Reward,
            true,
            0.99,
            &mut rng,
        )
        .unwrap();
        assert_eq!(sub.message, m(1));
        assert_eq!(sub.adv_r, -1.0);
        assert_eq!(sub.outcome.actions[BLUE], OPEN_BLUE);
    }

    #[test]
    fn sweep_enumerates_actions_times_messages() {
        let (env, inbox) = rdbd_after_comm_round(rdbd::Intent::Cooperative);
        let obs = env.observations();
        let graph = env.comm_graph();
        let outgoing = vec![MessageVector::null(2); 3];
        let actions = vec![OPEN_RED, OPEN_BLUE, WAIT];
        let live = LiveStep {
            observations: &obs,
            inbox: &inbox,
            outgoing: &outgoing,
            graph: &graph,
            actions: &actions,
        };
        // Red's inbox entry is NULL, which gets appended as a third candidate.
        let sw = sweep(
            &env,
            &live,
            RED,
            &TrustingBlue,
            vec![m(0), m(1)],
            true,
            &[0.5; 3],
        )
        .unwrap();
        assert_eq!(sw.candidates.len(), 3);
        assert_eq!(sw.on_message_index, 2);
        assert_eq!(sw.outcomes.len(), 3 * 2);
        let sw = sweep(
            &env,
            &live,
            COMM,
            &TrustingBlue,
            vec![m(0), m(1)],
            true,
            &[0.5; 3],
        )
        .unwrap();
        assert_eq!(sw.outcomes.len(), 2);
    }
}
