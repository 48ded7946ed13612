//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::evaluate::Regime;
use super::HarnessError;
use crate::learners::TrainSchedule;
use crate::power::{AdversarialSearch, MinimizeBy, RegularizationConfig};
use crate::worlds::EnvConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_comm: bool,
    pub adv_comm: bool,
}

/// Regularizer settings other than the weight, which lives at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationOptions {
    pub k_steps: u32,
    pub adversarial_search: AdversarialSearch,
    pub split_lambdas: Option<(f64, f64)>,
    pub minimize_by: MinimizeBy,
}

impl Default for RegularizationOptions {
    fn default() -> Self {
        let d = RegularizationConfig::default();
        Self {
            k_steps: d.k_steps,
            adversarial_search: d.adversarial_search,
            split_lambdas: d.split_lambdas,
            minimize_by: d.minimize_by,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Master seed of the evaluation episodes; equal values pair episodes
    /// across runs.
    pub seed: u64,
    /// Probability of an adversarial red agent under adversarial
    /// communication (RDBD only).
    pub adversarial_prob: f64,
    pub search: AdversarialSearch,
    pub minimize_by: MinimizeBy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 10_000,
            adversarial_prob: 0.5,
            search: AdversarialSearch::Exhaustive,
            minimize_by: MinimizeBy::Reward,
        }
    }
}

fn default_trials() -> usize {
    100
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub env: EnvConfig,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overrides applied on top of the environment's default schedule.
    #[serde(default)]
    pub schedule: Map<String, Value>,
    #[serde(default)]
    pub regularization: RegularizationOptions,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub output: PathBuf,
    #[serde(default)]
    pub log_power: bool,
    /// Evaluate this checkpoint instead of training.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, why: String| {
            Err(HarnessError::ConfigInvalid(format!(
                "field `{field}`: {why}"
            )))
        };
        if self.run_id.is_empty() || self.run_id.contains(['/', ',', '\n']) {
            return bad(
                "run_id",
                "must be non-empty without '/', ',' or newlines".into(),
            );
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(
                "lambda",
                format!("must be finite and >= 0, got {}", self.lambda),
            );
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eval.adversarial_prob) {
            return bad("eval.adversarial_prob", "must lie in [0, 1]".into());
        }
        if let Err(e) = self.regularization().validate() {
            return bad("regularization", e.to_string());
        }
        let schedule = self.schedule()?;
        if schedule.ac.epochs == 0 || schedule.ac.minibatch == 0 || schedule.batch_steps == 0 {
            return bad(
                "schedule",
                "epochs, minibatch and batch_steps must be positive".into(),
            );
        }
        if !(schedule.gamma > 0.0 && schedule.gamma <= 1.0) {
            return bad("schedule.gamma", "must lie in (0, 1]".into());
        }
        if !(schedule.alpha > 0.0 && schedule.alpha <= 1.0) {
            return bad("schedule.alpha", "must lie in (0, 1]".into());
        }
        if self.ablations.adv_comm && self.env.build().adversarial_channels().is_empty() {
            return bad(
                "ablations.adv_comm",
                format!("{} has no adversarial channel", self.env.name()),
            );
        }
        if let EnvConfig::Gc(gc) = &self.env {
            if gc.n_cooperative == 0 {
                return bad("env.n_cooperative", "must be positive".into());
            }
            if !(0.0..1.0).contains(&gc.obstacle_density) {
                return bad("env.obstacle_density", "must lie in [0, 1)".into());
            }
        }
        Ok(())
    }

    pub fn regularization(&self) -> RegularizationConfig {
        RegularizationConfig {
            lambda: self.lambda,
            k_steps: self.regularization.k_steps,
            adversarial_search: self.regularization.adversarial_search,
            split_lambdas: self.regularization.split_lambdas,
            minimize_by: self.regularization.minimize_by,
        }
    }

    /// The environment's default schedule with this config's overrides.
    pub fn schedule(&self) -> Result<TrainSchedule, HarnessError> {
        let base = serde_json::to_value(TrainSchedule::default_for(&self.env))
            .expect("schedule serializes");
        let mut merged = base;
        merge(&mut merged, &Value::Object(self.schedule.clone()));
        serde_json::from_value(merged)
            .map_err(|e| HarnessError::ConfigInvalid(format!("field `schedule`: {e}")))
    }

    pub fn regimes(&self) -> Vec<Regime> {
        let mut r = vec![Regime::Coop];
        if self.ablations.no_comm {
            r.push(Regime::NoComm);
        }
        if self.ablations.adv_comm {
            r.push(Regime::AdvComm);
        }
        r
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RDBD: &str = r#"{
        "run_id": "rdbd_cpr",
        "env": {"kind": "rdbd", "max_steps": 50, "adversarial_prob": 0.5},
        "lambda": 0.75,
        "seeds": [0, 1],
        "schedule": {"total_steps": 5000, "ac": {"epochs": 2}},
        "ablations": {"no_comm": true, "adv_comm": true},
        "trials": 10,
        "output": "out"
    }"#;

    #[test]
    fn parses_and_merges_schedule_overrides() {
        let cfg = ExperimentConfig::from_json(RDBD).unwrap();
        let s = cfg.schedule().unwrap();
        assert_eq!(s.total_steps, 5000);
        assert_eq!(s.ac.epochs, 2);
        assert_eq!(s.ac.minibatch, 256);
        assert_eq!(
            cfg.regimes(),
            vec![Regime::Coop, Regime::NoComm, Regime::AdvComm]
        );
        assert_eq!(cfg.regularization().lambda, 0.75);
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let text = RDBD.replace("0.75", "-0.1");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = RDBD.replace("\"trials\"", "\"trails\": 3, \"trials\"");
        assert!(ExperimentConfig::from_json(&top).is_err());
        let nested = RDBD.replace("\"total_steps\"", "\"total_stepz\"");
        let err = ExperimentConfig::from_json(&nested).unwrap_err();
        assert!(err.to_string().contains("schedule"), "{err}");
    }

    #[test]
    fn adversarial_regime_needs_a_channel() {
        let text = r#"{"run_id": "pp", "env": {"kind": "pp"}, "ablations": {"adv_comm": true}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn multi_step_unrolls_are_rejected() {
        let text = RDBD.replace(
            "\"trials\"",
            "\"regularization\": {\"k_steps\": 2}, \"trials\"",
        );
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
