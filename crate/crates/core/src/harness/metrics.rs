//! Per-episode metrics rows, the CSV file format and aggregates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::EpisodeResult;
use super::stats::{mean, std_dev};
use super::HarnessError;

pub const CSV_HEADER: &str = "run_id,seed,episode,agent_id,return,success,episode_len,coverage_pct";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub episode: u64,
    /// Reported agent id, or `team` for a team score.
    pub agent_id: String,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    pub episode_len: u32,
    pub coverage_pct: Option<f64>,
}

pub fn rows_from(run_id: &str, agent_id: &str, results: &[EpisodeResult]) -> Vec<MetricsRow> {
    results
        .iter()
        .map(|r| MetricsRow {
            run_id: run_id.to_string(),
            seed: r.seed,
            episode: r.episode,
            agent_id: agent_id.to_string(),
            ret: r.score,
            success: r.success,
            episode_len: r.length,
            coverage_pct: r.coverage_pct,
        })
        .collect()
}

/// Orders rows by run id, then seed and episode.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| (&a.run_id, a.seed, a.episode).cmp(&(&b.run_id, b.seed, b.episode)));
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| HarnessError::Io(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(HarnessError::Io(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::Io(format!("{}: {e}", path.display()))))
        .collect()
}

/// Summary of one run id's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub run_id: String,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub success_rate: f64,
    pub mean_episode_len: f64,
    pub mean_coverage_pct: Option<f64>,
}

/// Aggregates grouped by run id, in run id order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.run_id).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(id, g)| {
            let returns: Vec<f64> = g.iter().map(|r| r.ret).collect();
            let n = g.len() as f64;
            let coverage: Vec<f64> = g.iter().filter_map(|r| r.coverage_pct).collect();
            Aggregate {
                run_id: id.to_string(),
                episodes: g.len(),
                mean: mean(&returns),
                std: std_dev(&returns),
                success_rate: g.iter().filter(|r| r.success).count() as f64 / n,
                mean_episode_len: g.iter().map(|r| f64::from(r.episode_len)).sum::<f64>() / n,
                mean_coverage_pct: (coverage.len() == g.len()).then(|| mean(&coverage)),
            }
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("metrics serialize");
    std::fs::write(path, text + "\n")
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}
