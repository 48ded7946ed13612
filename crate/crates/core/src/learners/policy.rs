//! Per-agent controllers and the policy set that maps agents onto them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::approx::{masked_softmax, sample_index, softmax, Adam, Mlp};
use super::gnn::GnnActor;
use super::tabular::{obs_key, ObsKey, QTable};
use crate::commnet::{aggregate_inbox, Activation, GraphShiftOperator};
use crate::envcore::{AgentId, AgentObservation, MessageVector};
use crate::power::ReceiverModel;
use crate::worlds::rdbd;

/// Hand-written behaviours for agents that do not learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    /// RDBD communication agent: reports red's intent truthfully.
    RdbdTruthful,
    UniformRandom,
    /// Stays put when possible (`stay` is the action index).
    Stay(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Actor {
    /// MLP over own features and the mean delivered message. The first
    /// hidden layer doubles as the outgoing message.
    Mlp(Mlp),
    Gnn(GnnActor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neural {
    pub actor: Actor,
    pub critic: Mlp,
    /// The actor has a two-way communication gate (silent, speak) after
    /// its action logits; a silent agent sends NULL.
    #[serde(default)]
    pub gated: bool,
    #[serde(skip)]
    pub actor_opt: Option<Adam>,
    #[serde(skip)]
    pub critic_opt: Option<Adam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Tabular(QTable),
    Neural(Box<Neural>),
    Scripted(Script),
}

/// How actions are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    /// Epsilon-greedy for tabular controllers, sampling for neural ones.
    Explore { epsilon: f64 },
    /// Greedy for tabular controllers, sampling for neural ones.
    Evaluate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub message: MessageVector,
    /// Gate draw of a gated controller (true = speak).
    pub gate: Option<bool>,
    /// Joint log-probability of `action` and the gate draw (0 for tabular
    /// and scripted controllers).
    pub logp: f64,
    pub value: f64,
}

/// Flat input shared by the MLP actor and every critic.
pub fn flat_input(
    agent: AgentId,
    obs: &AgentObservation,
    inbox: &[MessageVector],
    graph: &GraphShiftOperator,
) -> Vec<f64> {
    let mut x = obs.features.clone();
    x.extend(aggregate_inbox(inbox, graph, agent));
    x
}

/// Tabular key: own features plus the messages of every sender.
pub fn tabular_key(
    agent: AgentId,
    obs: &AgentObservation,
    inbox: &[MessageVector],
    graph: &GraphShiftOperator,
) -> ObsKey {
    let mut parts: Vec<&[f64]> = vec![&obs.features];
    for j in graph.senders_to(agent) {
        parts.push(&inbox[j].payload);
    }
    obs_key(&parts)
}

impl Neural {
    pub fn new_mlp(
        obs_dim: usize,
        message_dim: usize,
        hidden: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = obs_dim + message_dim;
        let mut actor = Mlp::new(
            &[input, message_dim, hidden, n_actions],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        );
        actor.scale_last_layer(0.01);
        let critic = Self::new_critic(input, hidden, rng);
        Self {
            actor: Actor::Mlp(actor),
            critic,
            gated: false,
            actor_opt: None,
            critic_opt: None,
        }
    }

    pub fn new_gnn(
        obs_dim: usize,
        message_dim: usize,
        hops: usize,
        hidden: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let actor = GnnActor::new(obs_dim, message_dim, hops, hidden, hidden, n_actions, rng);
        let critic = Self::new_critic(obs_dim + message_dim, hidden, rng);
        Self {
            actor: Actor::Gnn(actor),
            critic,
            gated: false,
            actor_opt: None,
            critic_opt: None,
        }
    }

    /// Adds the communication gate, initially open with probability 1/2.
    pub fn with_gate(mut self) -> Self {
        if !self.gated {
            match &mut self.actor {
                Actor::Mlp(m) => m.append_outputs(2),
                Actor::Gnn(g) => g.head.append_outputs(2),
            }
            self.gated = true;
        }
        self
    }

    fn new_critic(input: usize, hidden: usize, rng: &mut impl Rng) -> Mlp {
        let mut critic = Mlp::new(
            &[input, hidden, hidden, 1],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        );
        critic.scale_last_layer(0.1);
        critic
    }

    pub fn actor_params(&self) -> Vec<f64> {
        match &self.actor {
            Actor::Mlp(m) => m.params.clone(),
            Actor::Gnn(g) => g.params(),
        }
    }

    pub fn set_actor_params(&mut self, p: &[f64]) {
        match &mut self.actor {
            Actor::Mlp(m) => m.params.copy_from_slice(p),
            Actor::Gnn(g) => g.set_params(p),
        }
    }

    pub fn actor_n_params(&self) -> usize {
        match &self.actor {
            Actor::Mlp(m) => m.n_params(),
            Actor::Gnn(g) => g.n_params(),
        }
    }

    /// Action probabilities (masked to legal actions) and the message head
    /// output, before gating.
    pub fn policy(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> (Vec<f64>, MessageVector) {
        let (probs, message, _) = self.policy_gated(agent, obs, inbox, graph);
        (probs, message)
    }

    /// As [`Neural::policy`], plus the gate distribution when gated.
    pub fn policy_gated(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> (Vec<f64>, MessageVector, Option<[f64; 2]>) {
        let (logits, message) = match &self.actor {
            Actor::Mlp(net) => {
                let mut trace = net
                    .forward_trace(&flat_input(agent, obs, inbox, graph))
                    .expect("actor input matches the environment");
                let logits = trace.acts.pop().expect("trace holds the output");
                (logits, trace.acts.swap_remove(1))
            }
            Actor::Gnn(net) => {
                let trace = net
                    .forward_trace(agent, &obs.features, inbox, graph)
                    .expect("actor input matches the environment");
                (trace.head.output().to_vec(), trace.embed.output().to_vec())
            }
        };
        let (action_logits, gate) = self.split_logits(&logits);
        let probs = masked_softmax(action_logits, &obs.legal_actions);
        let gate = gate.map(|g| {
            let p = softmax(g);
            [p[0], p[1]]
        });
        (probs, MessageVector::new(message), gate)
    }

    /// Splits actor output into action logits and gate logits.
    pub fn split_logits<'a>(&self, logits: &'a [f64]) -> (&'a [f64], Option<&'a [f64]>) {
        if self.gated {
            let (a, g) = logits.split_at(logits.len() - 2);
            (a, Some(g))
        } else {
            (logits, None)
        }
    }

    pub fn value(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> f64 {
        self.critic
            .forward(&flat_input(agent, obs, inbox, graph))
            .expect("critic input matches the environment")[0]
    }
}

/// All controllers of a team plus the agent-to-controller assignment.
/// Agents that share a controller share its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub controllers: Vec<Controller>,
    pub assignment: Vec<usize>,
    pub message_dim: usize,
}

impl PolicySet {
    pub fn n_agents(&self) -> usize {
        self.assignment.len()
    }

    pub fn controller_of(&self, agent: AgentId) -> &Controller {
        &self.controllers[self.assignment[agent]]
    }

    /// One decision. `u_explore` drives epsilon tests and gate draws,
    /// `u_action` the action draw.
    pub fn decide(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
        mode: ActMode,
        u_explore: f64,
        u_action: f64,
    ) -> Decision {
        let null = MessageVector::null(self.message_dim);
        match self.controller_of(agent) {
            Controller::Tabular(q) => {
                let key = tabular_key(agent, obs, inbox, graph);
                let legal = &obs.legal_actions;
                let action = match mode {
                    ActMode::Explore { epsilon } if u_explore < epsilon => {
                        legal[((u_action * legal.len() as f64) as usize).min(legal.len() - 1)]
                    }
                    _ => q.greedy(&key, legal),
                };
                Decision {
                    action,
                    message: null,
                    gate: None,
                    logp: 0.0,
                    value: q.max_value(&key, legal),
                }
            }
            Controller::Neural(n) => {
                let (probs, message, gate_probs) = n.policy_gated(agent, obs, inbox, graph);
                let action = sample_index(&probs, u_action);
                let mut logp = probs[action].ln();
                // Training draws the gate; evaluation takes the likelier branch.
                let gate = gate_probs.map(|p| {
                    let speak = match mode {
                        ActMode::Explore { .. } => u_explore < p[1],
                        ActMode::Evaluate => p[1] >= p[0],
                    };
                    logp += p[usize::from(speak)].ln();
                    speak
                });
                Decision {
                    action,
                    message: if gate == Some(false) { null } else { message },
                    gate,
                    logp,
                    value: n.value(agent, obs, inbox, graph),
                }
            }
            Controller::Scripted(s) => Decision {
                action: scripted_action(*s, obs, u_action),
                message: scripted_message(*s, obs, self.message_dim),
                gate: None,
                logp: 0.0,
                value: 0.0,
            },
        }
    }
}

fn scripted_action(s: Script, obs: &AgentObservation, u: f64) -> usize {
    let legal = &obs.legal_actions;
    match s {
        Script::RdbdTruthful => legal[0],
        Script::UniformRandom => legal[((u * legal.len() as f64) as usize).min(legal.len() - 1)],
        Script::Stay(stay) => {
            if obs.is_legal(stay) {
                stay
            } else {
                legal[0]
            }
        }
    }
}

fn scripted_message(s: Script, obs: &AgentObservation, dim: usize) -> MessageVector {
    match s {
        Script::RdbdTruthful => rdbd::encode_bit(usize::from(obs.features[0] > 0.5)),
        _ => MessageVector::null(dim),
    }
}

impl ReceiverModel for PolicySet {
    fn counterfactual_action(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
        u: f64,
    ) -> usize {
        match self.controller_of(agent) {
            Controller::Neural(n) => sample_index(&n.policy(agent, obs, inbox, graph).0, u),
            _ => {
                self.decide(agent, obs, inbox, graph, ActMode::Evaluate, 1.0, u)
                    .action
            }
        }
    }

    fn value(
        &self,
        agent: AgentId,
        obs: &AgentObservation,
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> f64 {
        match self.controller_of(agent) {
            Controller::Tabular(q) => {
                q.max_value(&tabular_key(agent, obs, inbox, graph), &obs.legal_actions)
            }
            Controller::Neural(n) => n.value(agent, obs, inbox, graph),
            Controller::Scripted(_) => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(features: Vec<f64>, legal: Vec<usize>) -> AgentObservation {
        AgentObservation {
            features,
            legal_actions: legal,
        }
    }

    #[test]
    fn shared_controller_gives_identical_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctrl = Controller::Neural(Box::new(Neural::new_mlp(3, 4, 8, 5, &mut rng)));
        let set = PolicySet {
            controllers: vec![ctrl],
            assignment: vec![0, 0],
            message_dim: 4,
        };
        let g = GraphShiftOperator::fully_connected(&[0, 1], 2);
        let o = obs(vec![0.1, 0.2, 0.3], vec![0, 1, 2, 3, 4]);
        let inbox = vec![MessageVector::new(vec![0.5; 4]); 2];
        let a = set.decide(0, &o, &inbox, &g, ActMode::Evaluate, 0.0, 0.37);
        let b = set.decide(1, &o, &inbox, &g, ActMode::Evaluate, 0.0, 0.37);
        assert_eq!(a, b);
        assert_eq!(a.message.dim(), 4);
        assert!(a.message.payload.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn neural_policy_respects_legality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = Neural::new_gnn(6, 4, 2, 8, 5, &mut rng);
        let g = GraphShiftOperator::fully_connected(&[0, 1, 2], 3);
        let o = obs(vec![0.0; 6], vec![4]);
        let (probs, _) = n.policy(1, &o, &vec![MessageVector::null(4); 3], &g);
        assert_eq!(probs, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn tabular_explores_then_exploits() {
        let mut q = QTable::new(3);
        let g = GraphShiftOperator::empty(1);
        let o = obs(vec![1.0], vec![0, 1, 2]);
        q.entries.insert(
            tabular_key(0, &o, &[MessageVector::null(2)], &g),
            vec![0.0, 0.0, 1.0],
        );
        let set = PolicySet {
            controllers: vec![Controller::Tabular(q)],
            assignment: vec![0],
            message_dim: 2,
        };
        let inbox = [MessageVector::null(2)];
        let greedy = set.decide(
            0,
            &o,
            &inbox,
            &g,
            ActMode::Explore { epsilon: 0.1 },
            0.5,
            0.0,
        );
        assert_eq!(greedy.action, 2);
        let random = set.decide(
            0,
            &o,
            &inbox,
            &g,
            ActMode::Explore { epsilon: 0.1 },
            0.05,
            0.0,
        );
        assert_eq!(random.action, 0);
    }

    #[test]
    fn truthful_script_reports_intent() {
        let set = PolicySet {
            controllers: vec![Controller::Scripted(Script::RdbdTruthful)],
            assignment: vec![0],
            message_dim: 2,
        };
        let g = GraphShiftOperator::empty(1);
        let inbox = [MessageVector::null(2)];
        let coop = set.decide(
            0,
            &obs(vec![1.0], vec![0]),
            &inbox,
            &g,
            ActMode::Evaluate,
            0.0,
            0.0,
        );
        assert_eq!(coop.message, rdbd::encode_bit(1));
        let adv = set.decide(
            0,
            &obs(vec![0.0], vec![0]),
            &inbox,
            &g,
            ActMode::Evaluate,
            0.0,
            0.0,
        );
        assert_eq!(adv.message, rdbd::encode_bit(0));
    }
}
