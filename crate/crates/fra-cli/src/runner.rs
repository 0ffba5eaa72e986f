//! Batch execution: run the attack over all configured pairs on a worker
//! pool, then write adversarial images, traces, and CSV reports from a
//! single collector in deterministic pair order.

use crate::config::{apply_override, render_config, validate_config, RunConfig};
use crate::error::{CliError, Result};
use crate::imageio::{load_image, save_image};
use crate::report::{write_metrics_csv, write_summary_csv, MetricsRow};
use fra_core::attack::{run_attack, IterationRecord};
use fra_core::defenses::{defend, DefenseSpec};
use fra_core::evaluation::holdout_similarity;
use fra_core::rng::Rng;
use fra_core::tensor::Image;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Everything one worker produces for one pair; files are written later by
/// the collector.
struct PairOutcome {
    index: usize,
    result: std::result::Result<PairData, String>,
}

struct PairData {
    adversarial: Image,
    adv_filename: String,
    rows: Vec<MetricsRow>,
    trace: Vec<IterationRecord>,
    pair_seed: u64,
}

#[derive(Debug)]
pub struct BatchSummary {
    pub completed: usize,
    pub failed: usize,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

fn image_extension(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("frat") => "frat",
        _ => "ppm",
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_rows(
    config: &RunConfig,
    index: usize,
    source_path: &Path,
    target_path: &Path,
    adversarial: &Image,
    source: &Image,
    target: &Image,
    final_loss: f64,
    delta_linf: f64,
) -> std::result::Result<Vec<MetricsRow>, String> {
    let mut rows = Vec::new();
    let mut defended: Vec<(String, Image)> = vec![("none".to_string(), adversarial.clone())];
    for defense in &config.defenses {
        let image = defend(adversarial, defense).map_err(|e| e.to_string())?;
        defended.push((defense.kind_name().to_string(), image));
    }
    for holdout in &config.holdouts {
        for (label, image) in &defended {
            let eval = holdout_similarity(image, source, target, holdout, &config.ensemble)
                .map_err(|e| e.to_string())?;
            rows.push(MetricsRow {
                pair: index,
                source: source_path.display().to_string(),
                target: target_path.display().to_string(),
                holdout_seed: holdout.seed,
                defense: label.clone(),
                sim_adv_target: eval.sim_adv_target,
                sim_adv_source: eval.sim_adv_source,
                success: eval.success,
                final_loss,
                delta_linf,
            });
        }
    }
    Ok(rows)
}

fn run_pair(config: &RunConfig, index: usize) -> PairOutcome {
    let (source_path, target_path) = &config.pairs[index];
    let pair_seed = Rng::stream_seed(config.master_seed, index as u64);
    let result = (|| -> std::result::Result<PairData, String> {
        let source = load_image(source_path).map_err(|e| e.to_string())?;
        let target = load_image(target_path).map_err(|e| e.to_string())?;
        let (adversarial, trace) = run_attack(&source, &target, &config.attack, &config.ensemble)
            .map_err(|e| e.to_string())?;
        let final_loss = trace.last().map(|r| r.total).unwrap_or(0.0);
        let delta_linf = trace.last().map(|r| r.delta_linf).unwrap_or(0.0);
        let rows = evaluate_rows(
            config,
            index,
            source_path,
            target_path,
            &adversarial,
            &source,
            &target,
            final_loss,
            delta_linf,
        )?;
        Ok(PairData {
            adv_filename: format!("adv_{index:04}.{}", image_extension(source_path)),
            adversarial,
            rows,
            trace,
            pair_seed,
        })
    })();
    PairOutcome { index, result }
}

fn format_trace(record: &IterationRecord) -> String {
    let join = |values: &[f64]| {
        values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("|")
    };
    let warnings = if record.warnings.is_empty() {
        "-".to_string()
    } else {
        record
            .warnings
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    };
    format!(
        "iter={} total={} losses=[{}] weights=[{}] grad_l1={} fgr_l1={} delta_linf={} warnings={}",
        record.iter,
        record.total,
        join(&record.losses),
        join(&record.weights),
        record.grad_l1,
        record.filtered_grad_l1,
        record.delta_linf,
        warnings
    )
}

/// Run every configured pair, then write artifacts in pair order:
/// `adv_NNNN.{ppm,frat}`, `pair_NNNN.trace`, `metrics.csv`, `summary.csv`,
/// and the resolved `effective-config.txt`.
pub fn run_batch(config: &RunConfig) -> Result<BatchSummary> {
    validate_config(config)?;
    if config.pairs.is_empty() {
        return Err(CliError::ConfigGeneral(
            "no pairs configured; add at least one [pair] section".into(),
        ));
    }
    std::fs::create_dir_all(&config.output_dir).map_err(|e| CliError::io(&config.output_dir, e))?;
    std::fs::write(
        config.output_dir.join("effective-config.txt"),
        render_config(config),
    )
    .map_err(|e| CliError::io(config.output_dir.join("effective-config.txt"), e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CliError::ConfigGeneral(format!("worker pool: {e}")))?;
    let mut outcomes: Vec<PairOutcome> = pool.install(|| {
        (0..config.pairs.len())
            .into_par_iter()
            .map(|index| run_pair(config, index))
            .collect()
    });
    outcomes.sort_by_key(|o| o.index);

    // Single collector, deterministic order.
    let mut rows = Vec::new();
    let mut completed = 0;
    let mut failed = 0;
    let mut failures = Vec::new();
    for outcome in &outcomes {
        match &outcome.result {
            Ok(data) => {
                completed += 1;
                let adv_path = config.output_dir.join(&data.adv_filename);
                save_image(&adv_path, &data.adversarial)?;
                let mut trace_text = String::new();
                trace_text.push_str("# fra-trace v1\n");
                trace_text.push_str(&format!(
                    "# pair={} source={} target={} pair_seed={}\n",
                    outcome.index,
                    config.pairs[outcome.index].0.display(),
                    config.pairs[outcome.index].1.display(),
                    data.pair_seed
                ));
                for record in &data.trace {
                    trace_text.push_str(&format_trace(record));
                    trace_text.push('\n');
                }
                let trace_path = config
                    .output_dir
                    .join(format!("pair_{:04}.trace", outcome.index));
                std::fs::write(&trace_path, trace_text)
                    .map_err(|e| CliError::io(&trace_path, e))?;
                rows.extend(data.rows.iter().cloned());
            }
            Err(message) => {
                failed += 1;
                failures.push(format!("pair {}: {}", outcome.index, message));
            }
        }
    }
    if !failures.is_empty() {
        let path = config.output_dir.join("failures.txt");
        std::fs::write(&path, failures.join("\n") + "\n").map_err(|e| CliError::io(&path, e))?;
    }

    let metrics_path = config.output_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &rows)?;
    let summary_path = config.output_dir.join("summary.csv");
    write_summary_csv(&summary_path, &rows)?;

    if completed == 0 {
        return Err(CliError::ConfigGeneral(format!(
            "all {failed} pairs failed; see {}",
            config.output_dir.join("failures.txt").display()
        )));
    }
    Ok(BatchSummary {
        completed,
        failed,
        metrics_path,
        summary_path,
    })
}

#[derive(Debug)]
pub struct SweepCell {
    pub value: String,
    pub output_dir: PathBuf,
    pub summary: BatchSummary,
}

fn sanitize(component: &str) -> String {
    component
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Vary exactly the swept key over its value list while holding everything
/// else (pairs included) fixed; one sub-run per value plus a combined
/// `sweep-summary.csv`. Each cell's emitted effective-config records the
/// sweep's base output directory (the cell subdirectory is derived from the
/// swept key and value), so effective-config records across cells differ
/// only in the swept key.
pub fn run_sweep(config: &RunConfig) -> Result<Vec<SweepCell>> {
    let sweep = config.sweep.clone().ok_or_else(|| {
        CliError::ConfigGeneral("sweep mode needs a [sweep] section or sweep flags".into())
    })?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| CliError::io(&config.output_dir, e))?;
    let mut cells = Vec::new();
    for value in &sweep.values {
        let mut cell_config = config.clone();
        cell_config.sweep = None;
        apply_override(&mut cell_config, &sweep.key, value)?;
        cell_config.output_dir =
            config
                .output_dir
                .join(format!("{}__{}", sanitize(&sweep.key), sanitize(value)));
        let summary = run_batch(&cell_config)?;
        let record = {
            let mut display = cell_config.clone();
            display.output_dir = config.output_dir.clone();
            render_config(&display)
        };
        let record_path = cell_config.output_dir.join("effective-config.txt");
        std::fs::write(&record_path, record).map_err(|e| CliError::io(&record_path, e))?;
        cells.push(SweepCell {
            value: value.clone(),
            output_dir: cell_config.output_dir,
            summary,
        });
    }
    let mut csv =
        String::from("# fra-sweep v1\nkey,value,defense,mean_sim_adv_target,success_rate,pairs\n");
    for cell in &cells {
        let rows = crate::report::read_metrics_csv(&cell.summary.metrics_path)?;
        for line in crate::report::summarize(&rows) {
            csv.push_str(&format!("{},{},{}\n", sweep.key, cell.value, line));
        }
    }
    let path = config.output_dir.join("sweep-summary.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    Ok(cells)
}

/// Re-evaluate previously saved adversarial images under the configured
/// defenses (the three standard ones when none are configured) and write
/// `defended-metrics.csv`.
pub fn run_defend_eval(config: &RunConfig, adv_dir: &Path) -> Result<BatchSummary> {
    validate_config(config)?;
    if config.pairs.is_empty() {
        return Err(CliError::ConfigGeneral("no pairs configured".into()));
    }
    let mut effective = config.clone();
    if effective.defenses.is_empty() {
        effective.defenses = vec![
            DefenseSpec::default_jpeg(),
            DefenseSpec::default_gaussian(),
            DefenseSpec::default_center_crop(),
        ];
    }
    std::fs::create_dir_all(&effective.output_dir)
        .map_err(|e| CliError::io(&effective.output_dir, e))?;

    let mut rows = Vec::new();
    let mut completed = 0;
    let mut failed = 0;
    for (index, (source_path, target_path)) in effective.pairs.iter().enumerate() {
        let adv_path = adv_dir.join(format!("adv_{index:04}.{}", image_extension(source_path)));
        let attempt = (|| -> std::result::Result<Vec<MetricsRow>, String> {
            let adversarial = load_image(&adv_path).map_err(|e| e.to_string())?;
            let source = load_image(source_path).map_err(|e| e.to_string())?;
            let target = load_image(target_path).map_err(|e| e.to_string())?;
            evaluate_rows(
                &effective,
                index,
                source_path,
                target_path,
                &adversarial,
                &source,
                &target,
                f64::NAN,
                adversarial.max_abs_diff(&source),
            )
        })();
        match attempt {
            Ok(mut pair_rows) => {
                completed += 1;
                rows.append(&mut pair_rows);
            }
            Err(_) => failed += 1,
        }
    }
    let metrics_path = effective.output_dir.join("defended-metrics.csv");
    write_metrics_csv(&metrics_path, &rows)?;
    let summary_path = effective.output_dir.join("defended-summary.csv");
    write_summary_csv(&summary_path, &rows)?;
    if completed == 0 {
        return Err(CliError::ConfigGeneral(
            "all pairs failed defended evaluation".into(),
        ));
    }
    Ok(BatchSummary {
        completed,
        failed,
        metrics_path,
        summary_path,
    })
}
