//! Clipped-ratio advantage actor-critic update for neural controllers.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::approx::{clip_grad_norm, masked_softmax, softmax, Adam};
use super::policy::{flat_input, Actor, Neural};
use crate::commnet::GraphShiftOperator;
use crate::envcore::{AgentId, AgentObservation, MessageVector};

#[derive(Debug, Error)]
pub enum AcError {
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip: f64,
    pub entropy: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub max_grad_norm: f64,
}

impl Default for AcConfig {
    fn default() -> Self {
        Self {
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            clip: 0.2,
            entropy: 0.01,
            epochs: 4,
            minibatch: 256,
            max_grad_norm: 0.5,
        }
    }
}

/// One training example. `weight` scales the policy-gradient term; the
/// critic regresses `ret` for every sample with `fit_critic`.
#[derive(Debug, Clone)]
pub struct AcSample {
    pub agent: AgentId,
    pub obs: AgentObservation,
    pub inbox: Vec<MessageVector>,
    pub graph: GraphShiftOperator,
    pub action: usize,
    /// Gate draw; `None` trains the action head only.
    pub gate: Option<bool>,
    /// Joint log-probability of `action` and `gate` under the acting policy.
    pub old_logp: f64,
    pub advantage: f64,
    pub ret: f64,
    pub weight: f64,
    pub fit_critic: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// One categorical output of the actor: its probabilities, the indices
/// that carry mass and the sampled index.
struct Head<'a> {
    probs: &'a [f64],
    support: &'a [usize],
    chosen: usize,
}

const GATE_SUPPORT: [usize; 2] = [0, 1];

/// Gradient of the per-sample actor loss with respect to each head's
/// logits. The ratio uses the joint log-probability over all heads.
fn logit_gradient(
    heads: &[Head<'_>],
    old_logp: f64,
    advantage: f64,
    weight: f64,
    cfg: &AcConfig,
) -> (Vec<Vec<f64>>, f64, f64) {
    let logp: f64 = heads.iter().map(|h| h.probs[h.chosen].ln()).sum();
    let ratio = (logp - old_logp).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * advantage;
    let surrogate = unclipped.min(clipped);
    // The unclipped branch is active unless clipping strictly binds.
    let active = unclipped <= clipped;
    let mut total_entropy = 0.0;
    let grads = heads
        .iter()
        .map(|h| {
            let entropy: f64 = h
                .support
                .iter()
                .map(|&a| h.probs[a])
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
            total_entropy += entropy;
            let mut g = vec![0.0; h.probs.len()];
            for &a in h.support {
                let p = h.probs[a];
                if active {
                    let onehot = if a == h.chosen { 1.0 } else { 0.0 };
                    g[a] -= weight * advantage * ratio * (onehot - p);
                }
                if p > 0.0 {
                    g[a] += cfg.entropy * p * (p.ln() + entropy);
                }
            }
            g
        })
        .collect();
    let loss = -weight * surrogate - cfg.entropy * total_entropy;
    (grads, loss, total_entropy)
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over `samples`.
pub fn actor_critic_update(
    net: &mut Neural,
    samples: &[AcSample],
    cfg: &AcConfig,
    rng: &mut impl Rng,
) -> Result<AcStats, AcError> {
    if samples.is_empty() {
        return Ok(AcStats::default());
    }
    let n_actor = net.actor_n_params();
    let n_critic = net.critic.n_params();
    let mut actor_opt = net
        .actor_opt
        .take()
        .unwrap_or_else(|| Adam::new(n_actor, cfg.actor_lr));
    let mut critic_opt = net
        .critic_opt
        .take()
        .unwrap_or_else(|| Adam::new(n_critic, cfg.critic_lr));
    actor_opt.lr = cfg.actor_lr;
    critic_opt.lr = cfg.critic_lr;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = AcStats::default();
    let mut count = 0usize;
    let result = (|| {
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch.max(1)) {
                let mut g_actor = vec![0.0; n_actor];
                let mut g_critic = vec![0.0; n_critic];
                let inv = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let s = &samples[i];
                    let (pl, ent) = actor_sample_grad(net, s, cfg, inv, &mut g_actor);
                    let vl = critic_sample_grad(net, s, inv, &mut g_critic);
                    if !(pl.is_finite() && vl.is_finite()) {
                        return Err(AcError::NonFiniteLoss(format!(
                            "agent {} action {} advantage {} return {}: policy loss {pl}, value loss {vl}",
                            s.agent, s.action, s.advantage, s.ret
                        )));
                    }
                    stats.policy_loss += pl;
                    stats.value_loss += vl;
                    stats.entropy += ent;
                    count += 1;
                }
                if g_actor.iter().chain(&g_critic).any(|g| !g.is_finite()) {
                    return Err(AcError::NonFiniteLoss("non-finite gradient".into()));
                }
                clip_grad_norm(&mut g_actor, cfg.max_grad_norm);
                clip_grad_norm(&mut g_critic, cfg.max_grad_norm);
                let mut p = net.actor_params();
                actor_opt.step(&mut p, &g_actor);
                net.set_actor_params(&p);
                critic_opt.step(&mut net.critic.params, &g_critic);
            }
        }
        Ok(())
    })();
    net.actor_opt = Some(actor_opt);
    net.critic_opt = Some(critic_opt);
    result?;
    let c = count.max(1) as f64;
    stats.policy_loss /= c;
    stats.value_loss /= c;
    stats.entropy /= c;
    Ok(stats)
}

fn actor_sample_grad(
    net: &Neural,
    s: &AcSample,
    cfg: &AcConfig,
    scale: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    let (mlp_trace, gnn_trace) = match &net.actor {
        Actor::Mlp(m) => {
            let t = m
                .forward_trace(&flat_input(s.agent, &s.obs, &s.inbox, &s.graph))
                .expect("sample input matches the actor");
            (Some(t), None)
        }
        Actor::Gnn(g) => {
            let t = g
                .forward_trace(s.agent, &s.obs.features, &s.inbox, &s.graph)
                .expect("sample input matches the actor");
            (None, Some(t))
        }
    };
    let logits = match (&mlp_trace, &gnn_trace) {
        (Some(t), _) => t.output(),
        (_, Some(t)) => t.head.output(),
        _ => unreachable!(),
    };
    let (action_logits, gate_logits) = net.split_logits(logits);
    let probs = masked_softmax(action_logits, &s.obs.legal_actions);
    let gate_probs = gate_logits.map(softmax);
    let mut heads = vec![Head {
        probs: &probs,
        support: &s.obs.legal_actions,
        chosen: s.action,
    }];
    if let (Some(p), Some(speak)) = (&gate_probs, s.gate) {
        heads.push(Head {
            probs: p,
            support: &GATE_SUPPORT,
            chosen: usize::from(speak),
        });
    }
    let (g, loss, ent) = logit_gradient(&heads, s.old_logp, s.advantage, s.weight, cfg);
    let up: Vec<f64> = g.concat().iter().map(|v| v * scale).collect();
    let mut up_full = vec![0.0; logits.len()];
    up_full[..up.len()].copy_from_slice(&up);
    match (&net.actor, mlp_trace, gnn_trace) {
        (Actor::Mlp(m), Some(t), _) => {
            m.backward(&t, &up_full, grad);
        }
        (Actor::Gnn(g), _, Some(t)) => {
            g.backward(&t, &up_full, grad);
        }
        _ => unreachable!(),
    }
    (loss, ent)
}

fn critic_sample_grad(net: &Neural, s: &AcSample, scale: f64, grad: &mut [f64]) -> f64 {
    if !s.fit_critic {
        return 0.0;
    }
    let trace = net
        .critic
        .forward_trace(&flat_input(s.agent, &s.obs, &s.inbox, &s.graph))
        .expect("sample input matches the critic");
    let err = trace.output()[0] - s.ret;
    net.critic.backward(&trace, &[err * scale], grad);
    0.5 * err * err
}

/// Generalized advantage estimates for one agent's trajectory. `values`
/// has one more entry than `rewards` (the bootstrap value, 0 if terminal).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(values.len(), rewards.len() + 1);
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit_sample(net: &Neural, action: usize, advantage: f64) -> AcSample {
        let obs = AgentObservation {
            features: vec![1.0],
            legal_actions: vec![0, 1],
        };
        let inbox = vec![MessageVector::null(2)];
        let graph = GraphShiftOperator::empty(1);
        let (probs, _) = net.policy(0, &obs, &inbox, &graph);
        AcSample {
            agent: 0,
            old_logp: probs[action].ln(),
            obs,
            inbox,
            graph,
            action,
            gate: None,
            advantage,
            ret: advantage,
            weight: 1.0,
            fit_critic: true,
        }
    }

    #[test]
    fn zero_advantage_leaves_actor_unchanged_without_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Neural::new_mlp(1, 2, 8, 2, &mut rng);
        let before = net.actor_params();
        let batch: Vec<AcSample> = (0..8).map(|i| bandit_sample(&net, i % 2, 0.0)).collect();
        let cfg = AcConfig {
            entropy: 0.0,
            ..AcConfig::default()
        };
        actor_critic_update(&mut net, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(net.actor_params(), before);
    }

    #[test]
    fn two_armed_bandit_learns_the_better_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Neural::new_mlp(1, 2, 8, 2, &mut rng);
        let cfg = AcConfig {
            epochs: 1,
            minibatch: 16,
            actor_lr: 0.01,
            ..AcConfig::default()
        };
        let mut p1 = 0.0;
        for _ in 0..2000 {
            let obs = bandit_sample(&net, 0, 0.0);
            let (probs, _) = net.policy(0, &obs.obs, &obs.inbox, &obs.graph);
            p1 = probs[1];
            if p1 > 0.95 {
                break;
            }
            let batch: Vec<AcSample> = (0..16)
                .map(|_| {
                    let a = usize::from(rng.gen::<f64>() < probs[1]);
                    let reward = if a == 1 { 1.0 } else { 0.0 };
                    let baseline = probs[1];
                    bandit_sample(&net, a, reward - baseline)
                })
                .collect();
            actor_critic_update(&mut net, &batch, &cfg, &mut rng).unwrap();
        }
        assert!(p1 > 0.95, "arm-1 probability {p1}");
    }

    #[test]
    fn non_finite_advantage_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Neural::new_mlp(1, 2, 4, 2, &mut rng);
        let batch = vec![bandit_sample(&net, 0, f64::NAN)];
        let err = actor_critic_update(&mut net, &batch, &AcConfig::default(), &mut rng);
        assert!(matches!(err, Err(AcError::NonFiniteLoss(_))));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let cfg = AcConfig::default();
        let legal = [0, 2, 3];
        let logits = [0.3, 9.0, -0.4, 0.1, 0.2, -0.5];
        let loss_at = |z: &[f64]| {
            let p = masked_softmax(&z[..4], &legal);
            let q = softmax(&z[4..]);
            let heads = [
                Head {
                    probs: &p,
                    support: &legal,
                    chosen: 2,
                },
                Head {
                    probs: &q,
                    support: &GATE_SUPPORT,
                    chosen: 1,
                },
            ];
            logit_gradient(&heads, -1.9, 0.7, 1.0, &cfg).1
        };
        let p = masked_softmax(&logits[..4], &legal);
        let q = softmax(&logits[4..]);
        let heads = [
            Head {
                probs: &p,
                support: &legal,
                chosen: 2,
            },
            Head {
                probs: &q,
                support: &GATE_SUPPORT,
                chosen: 1,
            },
        ];
        let g = logit_gradient(&heads, -1.9, 0.7, 1.0, &cfg).0.concat();
        for k in [0, 2, 3, 4, 5] {
            let mut up = logits;
            let mut down = logits;
            up[k] += 1e-6;
            down[k] -= 1e-6;
            let fd = (loss_at(&up) - loss_at(&down)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "logit {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn gate_learns_to_stay_silent_when_speaking_is_penalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Neural::new_mlp(1, 2, 8, 2, &mut rng).with_gate();
        let cfg = AcConfig {
            epochs: 1,
            minibatch: 16,
            actor_lr: 0.01,
            ..AcConfig::default()
        };
        let obs = AgentObservation {
            features: vec![1.0],
            legal_actions: vec![0, 1],
        };
        let inbox = vec![MessageVector::null(2)];
        let graph = GraphShiftOperator::empty(1);
        let mut speak = 1.0;
        for _ in 0..2000 {
            let (probs, _, gate) = net.policy_gated(0, &obs, &inbox, &graph);
            let gate = gate.expect("gated actor");
            speak = gate[1];
            if speak < 0.05 {
                break;
            }
            let batch: Vec<AcSample> = (0..16)
                .map(|_| {
                    let g = rng.gen::<f64>() < gate[1];
                    let advantage = if g { -1.0 + gate[1] } else { gate[1] };
                    AcSample {
                        agent: 0,
                        obs: obs.clone(),
                        inbox: inbox.clone(),
                        graph: graph.clone(),
                        action: 0,
                        gate: Some(g),
                        old_logp: probs[0].ln() + gate[usize::from(g)].ln(),
                        advantage,
                        ret: 0.0,
                        weight: 1.0,
                        fit_critic: false,
                    }
                })
                .collect();
            actor_critic_update(&mut net, &batch, &cfg, &mut rng).unwrap();
        }
        assert!(speak < 0.05, "speak probability {speak}");
    }

    #[test]
    fn gae_with_unit_lambda_is_discounted_return_minus_value() {
        let (adv, ret) = gae(&[1.0, 0.0, 2.0], &[0.5, 0.2, 0.1, 0.0], 0.9, 1.0);
        let g2 = 2.0;
        let g1 = 0.0 + 0.9 * g2;
        let g0 = 1.0 + 0.9 * g1;
        for (r, g) in ret.iter().zip([g0, g1, g2]) {
            assert!((r - g).abs() < 1e-12);
        }
        assert!((adv[0] - (g0 - 0.5)).abs() < 1e-12);
    }
}
