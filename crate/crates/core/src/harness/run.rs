//! Train, evaluate and write results for one experiment config.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::evaluate::{evaluate, reported_agent, scale_policies, EvalSettings, Regime};
use super::metrics::{
    aggregate, rows_from, sort_rows, write_csv, write_json, Aggregate, MetricsRow,
};
use super::HarnessError;
use crate::envcore::{derive_seed, streams};
use crate::learners::{train, PolicySet, TrainLog, TrainOptions};
use crate::par::Execution;
use crate::worlds::EnvConfig;

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub env: String,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub groups: Vec<Aggregate>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    /// Trained or loaded policies per training seed.
    pub policies: Vec<(u64, PolicySet)>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

/// Evaluation master seed for the policies of one training seed. Runs that
/// share `eval.seed` play identical episode seeds, so their results pair up.
pub fn eval_seed(cfg: &ExperimentConfig, train_seed: u64) -> u64 {
    derive_seed(cfg.eval.seed, streams::EVAL, train_seed)
}

pub fn eval_settings(
    cfg: &ExperimentConfig,
    train_seed: u64,
    regime: Regime,
    exec: Execution,
) -> EvalSettings {
    let gamma = cfg.schedule().map_or(0.99, |s| s.gamma);
    EvalSettings {
        trials: cfg.trials,
        seed: eval_seed(cfg, train_seed),
        regime,
        rdbd_adversarial_prob: cfg.eval.adversarial_prob,
        search: cfg.eval.search,
        minimize_by: cfg.eval.minimize_by,
        gamma,
        exec,
    }
}

fn agent_label(env: &EnvConfig) -> String {
    reported_agent(env).map_or_else(|| "team".to_string(), |a| a.to_string())
}

/// Checkpoint to evaluate for `seed`: a directory holds one file per seed.
fn checkpoint_path(base: &Path, seed: u64) -> PathBuf {
    if base.is_dir() {
        base.join(format!("seed_{seed}.json"))
    } else {
        base.to_path_buf()
    }
}

fn write_train_log(path: &Path, log: &TrainLog) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    for e in &log.episodes {
        w.serialize(e)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(io(path))
}

fn write_power_log(path: &Path, log: &TrainLog) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record([
        "step",
        "victim",
        "influencer",
        "standard",
        "communication",
        "total",
    ])
    .map_err(|e| HarnessError::Io(e.to_string()))?;
    for (step, p) in &log.power {
        w.write_record([
            step.to_string(),
            p.victim.to_string(),
            p.influencer.to_string(),
            p.standard.to_string(),
            p.communication.to_string(),
            p.total.to_string(),
        ])
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(io(path))
}

/// Policies for one seed: loaded from the configured checkpoint, or
/// trained and saved under `out/checkpoints`.
fn policies_for(
    cfg: &ExperimentConfig,
    seed: u64,
    exec: Execution,
    out: &Path,
) -> Result<PolicySet, HarnessError> {
    let schedule = cfg.schedule()?;
    if let Some(base) = &cfg.checkpoint {
        let ck = Checkpoint::load(&checkpoint_path(base, seed))?;
        ck.validate_against(&cfg.env, &schedule)?;
        return Ok(ck.policies);
    }
    let reg = cfg.regularization();
    let trained = train(
        &cfg.env,
        &schedule,
        &reg,
        seed,
        TrainOptions {
            exec,
            log_power: cfg.log_power,
        },
    )?;
    let ck_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(io(&ck_dir))?;
    Checkpoint::new(&cfg.env, &schedule, &reg, seed, trained.policies.clone())
        .save(&ck_dir.join(format!("seed_{seed}.json")))?;
    write_train_log(&out.join(format!("train_seed_{seed}.csv")), &trained.log)?;
    if cfg.log_power {
        write_power_log(&out.join(format!("power_seed_{seed}.csv")), &trained.log)?;
    }
    Ok(trained.policies)
}

/// Trains (or loads) every seed, evaluates every requested regime and
/// writes `metrics.csv`, `aggregate.json` and checkpoints under
/// `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out).map_err(io(&out))?;
    let agent = agent_label(&cfg.env);
    let mut rows = Vec::new();
    let mut policies = Vec::new();
    for &seed in &cfg.seeds {
        let p = policies_for(cfg, seed, exec, &out)?;
        for regime in cfg.regimes() {
            let results = evaluate(&cfg.env, &p, &eval_settings(cfg, seed, regime, exec))?;
            let run_id = format!("{}/{}", cfg.run_id, regime.name());
            rows.extend(rows_from(&run_id, &agent, &results));
        }
        policies.push((seed, p));
    }
    let summary = finish(cfg, &cfg.env, &out, &mut rows)?;
    Ok(RunOutput {
        rows,
        summary,
        policies,
    })
}

fn finish(
    cfg: &ExperimentConfig,
    env: &EnvConfig,
    out: &Path,
    rows: &mut [MetricsRow],
) -> Result<RunSummary, HarnessError> {
    sort_rows(rows);
    write_csv(&out.join("metrics.csv"), rows)?;
    let summary = RunSummary {
        run_id: cfg.run_id.clone(),
        env: serde_json::to_string(env).expect("env serializes"),
        lambda: cfg.lambda,
        seeds: cfg.seeds.clone(),
        trials: cfg.trials,
        groups: aggregate(rows),
    };
    write_json(&out.join("aggregate.json"), &summary)?;
    Ok(summary)
}

/// Evaluates the config's grid-coverage checkpoints on another
/// `[n_adversarial, n_cooperative]` composition without retraining.
pub fn scale_evaluate(
    cfg: &ExperimentConfig,
    composition: (usize, usize),
    exec: Execution,
) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let EnvConfig::Gc(gc) = &cfg.env else {
        return Err(HarnessError::CheckpointNotScalable(format!(
            "{} has a fixed team",
            cfg.env.name()
        )));
    };
    let Some(base) = &cfg.checkpoint else {
        return Err(HarnessError::ConfigInvalid(
            "field `checkpoint`: required for scaled evaluation".into(),
        ));
    };
    let mut target_gc = gc.clone();
    (target_gc.n_adversarial, target_gc.n_cooperative) = composition;
    let target = EnvConfig::Gc(target_gc);
    let schedule = cfg.schedule()?;
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out).map_err(io(&out))?;
    let mut rows = Vec::new();
    let mut policies = Vec::new();
    for &seed in &cfg.seeds {
        let ck = Checkpoint::load(&checkpoint_path(base, seed))?;
        ck.validate_against(&cfg.env, &schedule)?;
        let scaled = scale_policies(&ck.policies, &cfg.env, &target)?;
        for regime in cfg.regimes() {
            let results = evaluate(&target, &scaled, &eval_settings(cfg, seed, regime, exec))?;
            let run_id = format!(
                "{}[{},{}]/{}",
                cfg.run_id,
                composition.0,
                composition.1,
                regime.name()
            );
            rows.extend(rows_from(&run_id, "team", &results));
        }
        policies.push((seed, scaled));
    }
    let summary = finish(cfg, &target, &out, &mut rows)?;
    Ok(RunOutput {
        rows,
        summary,
        policies,
    })
}
