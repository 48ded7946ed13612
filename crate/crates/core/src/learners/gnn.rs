//! Graph-convolutional actor.
//!
//! Each agent embeds its own observation, stacks the embedding with the
//! messages it holds from the others (their embeddings from the previous
//! step), and applies one graph convolution over the communication graph
//! before an MLP head. Only agent `i`'s row of the convolution is computed.
//! Incoming messages are treated as fixed inputs, so gradients flow through
//! the agent's own embedding and the shared filter taps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::approx::{ApproxError, Mlp, Trace};
use crate::commnet::{Activation, GraphShiftOperator};
use crate::envcore::{AgentId, MessageVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnActor {
    pub embed: Mlp,
    /// Filter taps `A_k`, each `embed_dim x conv_dim`, row-major, k-major.
    pub taps: Vec<f64>,
    pub hops: usize,
    pub conv_dim: usize,
    pub head: Mlp,
}

/// Intermediate values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GnnTrace {
    pub embed: Trace,
    /// `(S^k X)_i` for each hop.
    pub diffused: Vec<Vec<f64>>,
    /// `(S^k)_ii` for each hop.
    pub self_loops: Vec<f64>,
    pub conv_out: Vec<f64>,
    pub head: Trace,
}

impl GnnActor {
    pub fn new(
        obs_dim: usize,
        embed_dim: usize,
        hops: usize,
        conv_dim: usize,
        head_hidden: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(hops >= 1, "at least one filter tap");
        let embed = Mlp::new(&[obs_dim, embed_dim], &[Activation::Tanh], rng);
        let a = (6.0 / (embed_dim + conv_dim) as f64).sqrt() / hops as f64;
        let taps = (0..hops * embed_dim * conv_dim)
            .map(|_| rng.gen_range(-a..a))
            .collect();
        let mut head = Mlp::new(
            &[conv_dim, head_hidden, n_actions],
            &[Activation::Tanh, Activation::Identity],
            rng,
        );
        head.scale_last_layer(0.01);
        Self {
            embed,
            taps,
            hops,
            conv_dim,
            head,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.embed.n_params() + self.taps.len() + self.head.n_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.embed.params.clone();
        p.extend_from_slice(&self.taps);
        p.extend_from_slice(&self.head.params);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (ne, nt) = (self.embed.n_params(), self.taps.len());
        self.embed.params.copy_from_slice(&p[..ne]);
        self.taps.copy_from_slice(&p[ne..ne + nt]);
        self.head.params.copy_from_slice(&p[ne + nt..]);
    }

    /// Outgoing message: the agent's embedding of its own observation.
    pub fn message(&self, obs: &[f64]) -> Result<MessageVector, ApproxError> {
        Ok(MessageVector::new(self.embed.forward(obs)?))
    }

    pub fn forward_trace(
        &self,
        agent: AgentId,
        obs: &[f64],
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> Result<GnnTrace, ApproxError> {
        let f = self.embed_dim();
        let embed = self.embed.forward_trace(obs)?;
        let own = embed.output().to_vec();
        let n = graph.n();
        for (j, m) in inbox.iter().enumerate() {
            if j != agent && m.dim() != f {
                return Err(ApproxError::DimensionMismatch {
                    expected: f,
                    got: m.dim(),
                });
            }
        }
        let row_of = |j: usize| -> &[f64] {
            if j == agent {
                &own
            } else {
                &inbox[j].payload
            }
        };
        let s = graph.matrix();
        // r_k = e_i^T S^k, so (S^k X)_i = r_k X.
        let mut r = vec![0.0; n];
        r[agent] = 1.0;
        let mut diffused = Vec::with_capacity(self.hops);
        let mut self_loops = Vec::with_capacity(self.hops);
        for k in 0..self.hops {
            if k > 0 {
                let mut next = vec![0.0; n];
                for (l, &rl) in r.iter().enumerate() {
                    if rl != 0.0 {
                        for (c, nx) in next.iter_mut().enumerate() {
                            *nx += rl * s[[l, c]];
                        }
                    }
                }
                r = next;
            }
            let mut d = vec![0.0; f];
            for (j, &rj) in r.iter().enumerate() {
                if rj != 0.0 {
                    for (dv, &x) in d.iter_mut().zip(row_of(j)) {
                        *dv += rj * x;
                    }
                }
            }
            diffused.push(d);
            self_loops.push(r[agent]);
        }
        let h = self.conv_dim;
        let mut conv_out = vec![0.0; h];
        for (k, d) in diffused.iter().enumerate() {
            let tap = &self.taps[k * f * h..(k + 1) * f * h];
            for (fi, &dv) in d.iter().enumerate() {
                if dv != 0.0 {
                    for (o, co) in conv_out.iter_mut().enumerate() {
                        *co += dv * tap[fi * h + o];
                    }
                }
            }
        }
        for c in &mut conv_out {
            *c = c.tanh();
        }
        let head = self.head.forward_trace(&conv_out)?;
        Ok(GnnTrace {
            embed,
            diffused,
            self_loops,
            conv_out,
            head,
        })
    }

    pub fn logits(
        &self,
        agent: AgentId,
        obs: &[f64],
        inbox: &[MessageVector],
        graph: &GraphShiftOperator,
    ) -> Result<Vec<f64>, ApproxError> {
        Ok(self
            .forward_trace(agent, obs, inbox, graph)?
            .head
            .output()
            .to_vec())
    }

    /// Accumulates gradients of `upstream · logits` into `grad` (flat layout
    /// of [`GnnActor::params`]).
    pub fn backward(&self, trace: &GnnTrace, upstream: &[f64], grad: &mut [f64]) {
        let (ne, nt) = (self.embed.n_params(), self.taps.len());
        let (g_embed, rest) = grad.split_at_mut(ne);
        let (g_taps, g_head) = rest.split_at_mut(nt);
        let d_conv = self.head.backward(&trace.head, upstream, g_head);
        let f = self.embed_dim();
        let h = self.conv_dim;
        let d_pre: Vec<f64> = d_conv
            .iter()
            .zip(&trace.conv_out)
            .map(|(d, y)| d * (1.0 - y * y))
            .collect();
        let mut d_own = vec![0.0; f];
        for k in 0..self.hops {
            let tap = &self.taps[k * f * h..(k + 1) * f * h];
            let g_tap = &mut g_taps[k * f * h..(k + 1) * f * h];
            let d = &trace.diffused[k];
            let loop_k = trace.self_loops[k];
            for fi in 0..f {
                let mut back = 0.0;
                for o in 0..h {
                    g_tap[fi * h + o] += d[fi] * d_pre[o];
                    back += tap[fi * h + o] * d_pre[o];
                }
                d_own[fi] += loop_k * back;
            }
        }
        self.embed.backward(&trace.embed, &d_own, g_embed);
    }
}
