//! Plain-text summary of one or more metrics files.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{aggregate, read_csv, Aggregate};
use super::HarnessError;

/// Relative improvement of `cpr` over `base` in percent; `None` when the
/// base mean is zero.
pub fn improvement(cpr: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (cpr - base) / base * 100.0)
}

pub fn format_improvement(v: Option<f64>) -> String {
    match v {
        Some(p) => format!("{}%", p.round() as i64),
        None => "undefined".into(),
    }
}

/// Regime part of a `run/regime` id.
fn regime_of(run_id: &str) -> &str {
    run_id.rsplit_once('/').map_or(run_id, |(_, r)| r)
}

/// One table per file, then the improvement of every later file over the
/// first for each regime they share.
pub fn report(paths: &[&Path]) -> Result<String, HarnessError> {
    let mut out = String::new();
    let mut tables: Vec<Vec<Aggregate>> = Vec::new();
    for path in paths {
        let agg = aggregate(&read_csv(path)?);
        writeln!(out, "{}", path.display()).unwrap();
        writeln!(
            out,
            "  {:<32} {:>6} {:>22} {:>8} {:>8} {:>9}",
            "run", "n", "mean (∓ std)", "success", "length", "coverage"
        )
        .unwrap();
        for a in &agg {
            let cov = a
                .mean_coverage_pct
                .map_or_else(|| "-".to_string(), |c| format!("{c:.2}%"));
            writeln!(
                out,
                "  {:<32} {:>6} {:>22} {:>8.3} {:>8.3} {:>9}",
                a.run_id,
                a.episodes,
                format!("{:.3} (∓ {:.3})", a.mean, a.std),
                a.success_rate,
                a.mean_episode_len,
                cov
            )
            .unwrap();
        }
        tables.push(agg);
    }
    if let Some((base, rest)) = tables.split_first() {
        for (path, other) in paths[1..].iter().zip(rest) {
            writeln!(
                out,
                "improvement of {} over {}",
                path.display(),
                paths[0].display()
            )
            .unwrap();
            for b in base {
                let regime = regime_of(&b.run_id);
                if let Some(o) = other.iter().find(|o| regime_of(&o.run_id) == regime) {
                    writeln!(
                        out,
                        "  {:<12} {:>10.3} vs {:>10.3}  {}",
                        regime,
                        o.mean,
                        b.mean,
                        format_improvement(improvement(o.mean, b.mean))
                    )
                    .unwrap();
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{write_csv, MetricsRow};

    #[test]
    fn improvement_percentages() {
        assert_eq!(format_improvement(improvement(204.92, 93.56)), "119%");
        assert_eq!(format_improvement(improvement(5.0, 5.0)), "0%");
        assert_eq!(format_improvement(improvement(1.0, 0.0)), "undefined");
    }

    #[test]
    fn report_pairs_regimes_across_files() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, run: &str, values: &[f64]| {
            let rows: Vec<MetricsRow> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| MetricsRow {
                    run_id: format!("{run}/coop"),
                    seed: 0,
                    episode: i as u64,
                    agent_id: "team".into(),
                    ret: v,
                    success: false,
                    episode_len: 3,
                    coverage_pct: None,
                })
                .collect();
            let p = dir.path().join(name);
            write_csv(&p, &rows).unwrap();
            p
        };
        let base = write("base.csv", "base", &[1.0, 3.0]);
        let cpr = write("cpr.csv", "cpr", &[3.0, 5.0]);
        let text = report(&[&base, &cpr]).unwrap();
        assert!(text.contains("2.000 (∓ 1.414)"), "{text}");
        assert!(text.contains("100%"), "{text}");
    }
}
