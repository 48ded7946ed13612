//! Communication topology and message aggregation.
//!
//! The graph shift operator `S` has `S[i][j] = 1` when agent `j` can transmit
//! to agent `i`. A graph convolution layer mixes features over `K` hops:
//! `X_out = act(sum_{k<K} S^k X A_k)`.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envcore::{AgentId, MessageVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphShiftOperator {
    s: Array2<f64>,
}

impl GraphShiftOperator {
    pub fn empty(n: usize) -> Self {
        Self {
            s: Array2::zeros((n, n)),
        }
    }

    /// Builds from directed `(receiver, sender)` pairs. Self-loops are ignored.
    pub fn from_edges(n: usize, edges: &[(AgentId, AgentId)]) -> Self {
        let mut s = Array2::zeros((n, n));
        for &(i, j) in edges {
            if i != j {
                s[[i, j]] = 1.0;
            }
        }
        Self { s }
    }

    pub fn fully_connected(members: &[AgentId], n: usize) -> Self {
        let edges: Vec<_> = members
            .iter()
            .flat_map(|&i| members.iter().map(move |&j| (i, j)))
            .collect();
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn connected(&self, receiver: AgentId, sender: AgentId) -> bool {
        self.s[[receiver, sender]] != 0.0
    }

    pub fn senders_to(&self, receiver: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        (0..self.n()).filter(move |&j| self.connected(receiver, j))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn is_symmetric(&self) -> bool {
        self.s == self.s.t()
    }

    /// Removes every edge touching `agent`'s inbox.
    pub fn isolate_receiver(&mut self, agent: AgentId) {
        self.s.row_mut(agent).fill(0.0);
    }

    /// `P S P^T` for the permutation `perm` (new index `a` holds old `perm[a]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let s = Array2::from_shape_fn((n, n), |(a, b)| self.s[[perm[a], perm[b]]]);
        Self { s }
    }
}

pub fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Symmetric proximity graph: `S[i][j] = 1` iff `i != j` and the Chebyshev
/// distance between the two positions is at most `comm_range`.
pub fn build_adjacency(positions: &[(i32, i32)], comm_range: i32) -> GraphShiftOperator {
    let n = positions.len();
    let s = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && chebyshev(positions[i], positions[j]) <= comm_range {
            1.0
        } else {
            0.0
        }
    });
    GraphShiftOperator { s }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConvLayer {
    /// `weights[k]` is the `F x G` filter tap for hop `k`; `K = weights.len()`.
    pub weights: Vec<Array2<f64>>,
    pub activation: Activation,
}

impl GraphConvLayer {
    pub fn new(weights: Vec<Array2<f64>>, activation: Activation) -> Result<Self, CommError> {
        let first = weights
            .first()
            .ok_or_else(|| CommError::DimensionMismatch("a layer needs K >= 1 taps".into()))?;
        if weights.iter().any(|w| w.dim() != first.dim()) {
            return Err(CommError::DimensionMismatch(
                "all hop taps must share one shape".into(),
            ));
        }
        Ok(Self {
            weights,
            activation,
        })
    }

    pub fn hops(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights[0].ncols()
    }
}

/// `[S^0 X, S^1 X, ..., S^{K-1} X]`.
pub fn diffused_features(x: &Array2<f64>, s: &GraphShiftOperator, hops: usize) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(hops);
    let mut current = x.clone();
    for k in 0..hops {
        if k > 0 {
            current = s.matrix().dot(&current);
        }
        out.push(current.clone());
    }
    out
}

pub fn graph_conv(
    x: &Array2<f64>,
    s: &GraphShiftOperator,
    layer: &GraphConvLayer,
) -> Result<Array2<f64>, CommError> {
    if s.n() != x.nrows() {
        return Err(CommError::DimensionMismatch(format!(
            "S is {}x{} but X has {} rows",
            s.n(),
            s.n(),
            x.nrows()
        )));
    }
    if x.ncols() != layer.in_dim() {
        return Err(CommError::DimensionMismatch(format!(
            "X has {} columns, layer expects {}",
            x.ncols(),
            layer.in_dim()
        )));
    }
    let mut z = Array2::zeros((x.nrows(), layer.out_dim()));
    for (sk_x, a_k) in diffused_features(x, s, layer.hops())
        .iter()
        .zip(&layer.weights)
    {
        z += &sk_x.dot(a_k);
    }
    let act = layer.activation;
    z.mapv_inplace(|v| act.apply(v));
    Ok(z)
}

/// Cascades layers: `X_l = act(A_l(X_{l-1}; S))`.
pub fn graph_conv_stack(
    x: &Array2<f64>,
    s: &GraphShiftOperator,
    layers: &[GraphConvLayer],
) -> Result<Array2<f64>, CommError> {
    layers
        .iter()
        .try_fold(x.clone(), |acc, layer| graph_conv(&acc, s, layer))
}

/// `gate == true` sends `hidden`; otherwise the NULL message.
pub fn gated_message(hidden: &[f64], gate: bool) -> MessageVector {
    if gate {
        MessageVector::new(hidden.to_vec())
    } else {
        MessageVector::null(hidden.len())
    }
}

/// Mean payload over the receiver's senders; zeros when nobody can reach it.
pub fn aggregate_inbox(
    messages: &[MessageVector],
    s: &GraphShiftOperator,
    receiver: AgentId,
) -> Vec<f64> {
    let dim = messages.first().map_or(0, MessageVector::dim);
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for j in s.senders_to(receiver) {
        for (acc, &v) in sum.iter_mut().zip(&messages[j].payload) {
            *acc += v;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        sum.iter_mut().for_each(|v| *v *= inv);
    }
    sum
}

/// Stacks message payloads into a feature matrix, one row per agent.
pub fn stack_messages(messages: &[MessageVector]) -> Array2<f64> {
    let dim = messages.first().map_or(0, MessageVector::dim);
    let mut x = Array2::zeros((messages.len(), dim));
    for (mut row, m) in x.rows_mut().into_iter().zip(messages) {
        row.assign(&ArrayView1::from(&m.payload[..]));
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envcore::{rng_for, streams};
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn two_agents_in_range() {
        let s = build_adjacency(&[(0, 0), (2, 1)], 2);
        assert_eq!(s.matrix(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn isolated_agents() {
        let s = build_adjacency(&[(0, 0), (5, 5), (0, 9)], 3);
        assert!(s.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn line_at_range_spacing_forms_chain() {
        let s = build_adjacency(&[(0, 0), (0, 4), (0, 8)], 4);
        assert_eq!(
            s.matrix(),
            &array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
        assert!(s.is_symmetric());
    }

    #[test]
    fn single_hop_ignores_graph() {
        let mut rng = rng_for(1, streams::EVAL, 0);
        let x = random_matrix(&mut rng, 3, 4);
        let a0 = random_matrix(&mut rng, 4, 2);
        let layer = GraphConvLayer::new(vec![a0.clone()], Activation::Tanh).unwrap();
        let s = build_adjacency(&[(0, 0), (0, 1), (0, 2)], 5);
        let out = graph_conv(&x, &s, &layer).unwrap();
        let expected = x.dot(&a0).mapv(f64::tanh);
        assert!((&out - &expected).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn zero_operator_drops_hop_terms() {
        let mut rng = rng_for(2, streams::EVAL, 0);
        let x = random_matrix(&mut rng, 3, 4);
        let a0 = random_matrix(&mut rng, 4, 2);
        let a1 = random_matrix(&mut rng, 4, 2);
        let layer = GraphConvLayer::new(vec![a0.clone(), a1], Activation::Relu).unwrap();
        let out = graph_conv(&x, &GraphShiftOperator::empty(3), &layer).unwrap();
        let expected = x.dot(&a0).mapv(|v| v.max(0.0));
        assert_eq!(out, expected);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let layer = GraphConvLayer::new(vec![Array2::zeros((3, 2))], Activation::Identity).unwrap();
        let x = Array2::zeros((2, 4));
        assert!(graph_conv(&x, &GraphShiftOperator::empty(2), &layer).is_err());
        assert!(graph_conv(
            &Array2::zeros((2, 3)),
            &GraphShiftOperator::empty(3),
            &layer
        )
        .is_err());
        assert!(GraphConvLayer::new(vec![], Activation::Tanh).is_err());
    }

    #[test]
    fn locality_of_isolated_receiver() {
        let mut rng = rng_for(3, streams::EVAL, 0);
        let mut s = build_adjacency(&[(0, 0), (0, 1), (1, 1), (2, 2)], 2);
        s.isolate_receiver(0);
        let layer = GraphConvLayer::new(
            vec![random_matrix(&mut rng, 3, 3), random_matrix(&mut rng, 3, 3)],
            Activation::Tanh,
        )
        .unwrap();
        let x = random_matrix(&mut rng, 4, 3);
        let base = graph_conv(&x, &s, &layer).unwrap();
        let mut probed = x.clone();
        for j in 1..4 {
            probed.row_mut(j).mapv_inplace(|v| v + 0.5);
        }
        let moved = graph_conv(&probed, &s, &layer).unwrap();
        assert_eq!(base.row(0), moved.row(0));
        assert_ne!(base.row(1), moved.row(1));
    }

    #[test]
    fn gating() {
        let h = [0.3, -0.2];
        assert!(gated_message(&h, false).is_null());
        assert_eq!(gated_message(&h, true).payload, h.to_vec());
    }

    #[test]
    fn inbox_means() {
        let s = GraphShiftOperator::from_edges(3, &[(0, 1), (0, 2)]);
        let msgs = vec![
            MessageVector::new(vec![9.0, 9.0]),
            MessageVector::new(vec![1.0, 2.0]),
            MessageVector::new(vec![3.0, 4.0]),
        ];
        assert_eq!(aggregate_inbox(&msgs, &s, 0), vec![2.0, 3.0]);
        assert_eq!(aggregate_inbox(&msgs, &s, 1), vec![0.0, 0.0]);
        let single = GraphShiftOperator::from_edges(3, &[(2, 1)]);
        assert_eq!(aggregate_inbox(&msgs, &single, 2), vec![1.0, 2.0]);
        let nulls = vec![MessageVector::null(2); 3];
        assert_eq!(aggregate_inbox(&nulls, &s, 0), vec![0.0, 0.0]);
    }
}
