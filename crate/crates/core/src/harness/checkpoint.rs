//! Trained policy sets on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::learners::{init_policies, Actor, Controller, PolicySet, TrainSchedule};
use crate::power::RegularizationConfig;
use crate::worlds::EnvConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// SHA-256 of the training inputs (environment, schedule, regularizer
    /// and seed).
    pub config_hash: String,
    pub env: EnvConfig,
    pub seed: u64,
    pub lambda: f64,
    /// Parameter layout of each controller.
    pub shapes: Vec<String>,
    pub policies: PolicySet,
}

pub fn config_hash(
    env: &EnvConfig,
    schedule: &TrainSchedule,
    reg: &RegularizationConfig,
    seed: u64,
) -> String {
    let doc = serde_json::json!({
        "env": env,
        "schedule": schedule,
        "regularization": reg,
        "seed": seed,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Layout description of every controller, e.g. `mlp[59,32,64,5]`.
pub fn shapes(policies: &PolicySet) -> Vec<String> {
    let dims = |s: &[usize]| {
        s.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    };
    policies
        .controllers
        .iter()
        .map(|c| match c {
            Controller::Tabular(q) => format!("tabular[{}]", q.n_actions),
            Controller::Scripted(s) => format!("scripted[{s:?}]"),
            Controller::Neural(n) => {
                let actor = match &n.actor {
                    Actor::Mlp(m) => format!("mlp[{}]", dims(&m.sizes)),
                    Actor::Gnn(g) => format!(
                        "gnn[{}|{}x{}|{}]",
                        dims(&g.embed.sizes),
                        g.hops,
                        g.conv_dim,
                        dims(&g.head.sizes)
                    ),
                };
                format!("{actor} critic[{}]", dims(&n.critic.sizes))
            }
        })
        .collect()
}

impl Checkpoint {
    pub fn new(
        env: &EnvConfig,
        schedule: &TrainSchedule,
        reg: &RegularizationConfig,
        seed: u64,
        policies: PolicySet,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(env, schedule, reg, seed),
            env: env.clone(),
            seed,
            lambda: reg.lambda,
            shapes: shapes(&policies),
            policies,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }

    /// Reads a checkpoint and checks its version and internal consistency.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let ck: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::CheckpointMismatch(format!("{}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(HarnessError::CheckpointMismatch(format!(
                "version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if shapes(&ck.policies) != ck.shapes {
            return Err(HarnessError::CheckpointMismatch(
                "stored shapes disagree with the parameters".into(),
            ));
        }
        Ok(ck)
    }

    /// Checks that the checkpoint was trained on `env` with a model layout
    /// that `schedule` would produce.
    pub fn validate_against(
        &self,
        env: &EnvConfig,
        schedule: &TrainSchedule,
    ) -> Result<(), HarnessError> {
        if &self.env != env {
            return Err(HarnessError::CheckpointMismatch(format!(
                "trained on {}, config asks for {}",
                serde_json::to_string(&self.env).unwrap_or_default(),
                serde_json::to_string(env).unwrap_or_default()
            )));
        }
        let expected = shapes(&init_policies(env, schedule, 0));
        if expected != self.shapes {
            return Err(HarnessError::CheckpointMismatch(format!(
                "model layout {:?}, config implies {:?}",
                self.shapes, expected
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::{GcConfig, PpConfig};

    #[test]
    fn save_load_round_trip_and_validation() {
        let env = EnvConfig::Pp(PpConfig::default());
        let sched = TrainSchedule::default_for(&env);
        let reg = RegularizationConfig::with_lambda(0.25);
        let ck = Checkpoint::new(&env, &sched, &reg, 3, init_policies(&env, &sched, 3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        back.validate_against(&env, &sched).unwrap();
        let gc = EnvConfig::Gc(GcConfig::default());
        let err = back.validate_against(&gc, &sched).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_depends_on_every_training_input() {
        let env = EnvConfig::Pp(PpConfig::default());
        let sched = TrainSchedule::default_for(&env);
        let reg = RegularizationConfig::with_lambda(0.25);
        let h = config_hash(&env, &sched, &reg, 0);
        assert_eq!(h.len(), 64);
        assert_ne!(h, config_hash(&env, &sched, &reg, 1));
        assert_ne!(
            h,
            config_hash(&env, &sched, &RegularizationConfig::with_lambda(0.3), 0)
        );
    }

    #[test]
    fn tampered_shapes_are_rejected() {
        let env = EnvConfig::Pp(PpConfig::default());
        let sched = TrainSchedule::default_for(&env);
        let mut ck = Checkpoint::new(
            &env,
            &sched,
            &RegularizationConfig::default(),
            0,
            init_policies(&env, &sched, 0),
        );
        ck.shapes[0] = "mlp[1,2]".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
