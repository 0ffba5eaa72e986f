//! CSV emission for per-pair metrics and per-defense aggregates.
//!
//! The schema is fixed and versioned by the leading comment line. Floats are
//! written with Rust's shortest round-trip formatting, so identical runs
//! produce byte-identical files. Field values must not contain commas; paths
//! with commas are not supported.

use crate::error::{CliError, Result};
use std::path::Path;

pub const METRICS_SCHEMA: &str = "# fra-metrics v1";
pub const METRICS_HEADER: &str =
    "pair,source,target,holdout_seed,defense,sim_adv_target,sim_adv_source,success,final_loss,delta_linf";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub pair: usize,
    pub source: String,
    pub target: String,
    pub holdout_seed: u64,
    pub defense: String,
    pub sim_adv_target: f64,
    pub sim_adv_source: f64,
    pub success: bool,
    pub final_loss: f64,
    pub delta_linf: f64,
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.pair,
            self.source,
            self.target,
            self.holdout_seed,
            self.defense,
            self.sim_adv_target,
            self.sim_adv_source,
            self.success as u8,
            self.final_loss,
            self.delta_linf
        )
    }

    fn from_csv(line: &str, path: &Path) -> Result<MetricsRow> {
        let bad = |message: String| CliError::Format {
            format: "metrics CSV",
            path: path.to_path_buf(),
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(bad(format!("expected 10 fields, got {}", fields.len())));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(format!("bad float `{s}`: {e}")))
        };
        Ok(MetricsRow {
            pair: fields[0]
                .parse()
                .map_err(|e| bad(format!("bad pair index: {e}")))?,
            source: fields[1].to_string(),
            target: fields[2].to_string(),
            holdout_seed: fields[3]
                .parse()
                .map_err(|e| bad(format!("bad seed: {e}")))?,
            defense: fields[4].to_string(),
            sim_adv_target: parse_f(fields[5])?,
            sim_adv_source: parse_f(fields[6])?,
            success: fields[7] == "1",
            final_loss: parse_f(fields[8])?,
            delta_linf: parse_f(fields[9])?,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(METRICS_SCHEMA);
    out.push('\n');
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty() && *l != METRICS_HEADER)
        .map(|l| MetricsRow::from_csv(l, path))
        .collect()
}

/// Per-defense aggregate lines `defense,mean_sim_adv_target,success_rate,pairs`
/// in first-seen defense order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for row in rows {
        if !order.contains(&row.defense) {
            order.push(row.defense.clone());
        }
    }
    order
        .into_iter()
        .map(|defense| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.defense == defense).collect();
            let n = group.len() as f64;
            let mean = group.iter().map(|r| r.sim_adv_target).sum::<f64>() / n;
            let rate = group.iter().filter(|r| r.success).count() as f64 / n;
            format!("{defense},{mean},{rate},{}", group.len())
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from("# fra-summary v1\ndefense,mean_sim_adv_target,success_rate,rows\n");
    for line in summarize(rows) {
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pair: usize, defense: &str, sim: f64, success: bool) -> MetricsRow {
        MetricsRow {
            pair,
            source: format!("s{pair}.ppm"),
            target: format!("t{pair}.ppm"),
            holdout_seed: 909,
            defense: defense.to_string(),
            sim_adv_target: sim,
            sim_adv_source: 0.1,
            success,
            final_loss: 0.25,
            delta_linf: 16.0 / 255.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![row(0, "none", 0.8, true), row(1, "jpeg-like", 0.4, false)];
        write_metrics_csv(&path, &rows).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(METRICS_SCHEMA));
    }

    #[test]
    fn summaries_group_by_defense() {
        let rows = vec![
            row(0, "none", 0.8, true),
            row(1, "none", 0.4, false),
            row(0, "gaussian", 0.2, false),
        ];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2);
        assert!(summary[0].starts_with("none,"));
        assert!(summary[0].contains("0.6000000000000001,0.5,2"));
        assert!(summary[1].starts_with("gaussian,"));
    }
}
