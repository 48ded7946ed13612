//! Tabular Q-learning over discretized observation keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Observation key: features and delivered messages scaled and rounded.
pub type ObsKey = Vec<i64>;

pub fn obs_key(parts: &[&[f64]]) -> ObsKey {
    parts
        .iter()
        .flat_map(|p| p.iter().map(|&x| (x * 1000.0).round() as i64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_actions: usize,
    #[serde(with = "entry_list")]
    pub entries: BTreeMap<ObsKey, Vec<f64>>,
}

/// JSON object keys must be strings, so entries travel as `[key, row]` pairs.
mod entry_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    use super::ObsKey;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<ObsKey, Vec<f64>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<ObsKey, Vec<f64>>, D::Error> {
        let pairs: Vec<(ObsKey, Vec<f64>)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        Self {
            n_actions,
            entries: BTreeMap::new(),
        }
    }

    /// Row for `key`; unseen keys read as zeros.
    pub fn row(&self, key: &ObsKey) -> Vec<f64> {
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn get(&self, key: &ObsKey, action: usize) -> f64 {
        self.entries.get(key).map_or(0.0, |r| r[action])
    }

    /// Highest-valued legal action; ties go to the lowest index.
    pub fn greedy(&self, key: &ObsKey, legal: &[usize]) -> usize {
        let row = self.row(key);
        let mut best = legal[0];
        for &a in &legal[1..] {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, key: &ObsKey, legal: &[usize]) -> f64 {
        let row = self.row(key);
        legal
            .iter()
            .map(|&a| row[a])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One temporal-difference backup. `next` is `None` at a terminal state.
pub fn q_update(
    table: &mut QTable,
    key: &ObsKey,
    action: usize,
    r: f64,
    next: Option<(&ObsKey, &[usize])>,
    alpha: f64,
    gamma: f64,
) {
    debug_assert!(alpha > 0.0 && alpha <= 1.0);
    let boot = next.map_or(0.0, |(k, legal)| table.max_value(k, legal));
    let n = table.n_actions;
    let q = table
        .entries
        .entry(key.clone())
        .or_insert_with(|| vec![0.0; n]);
    q[action] += alpha * (r + gamma * boot - q[action]);
}

/// Linearly decaying exploration rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of the budget over which epsilon decays.
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.6,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64, total: u64) -> f64 {
        let horizon = (total as f64 * self.decay_fraction).max(1.0);
        let frac = (step as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}
