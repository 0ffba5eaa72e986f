use clap::{Args, Parser, Subcommand};
use fra_cli::config::{apply_override, parse_config, render_config, RunConfig, SweepSpec};
use fra_cli::error::{CliError, Result};
use fra_cli::imageio::{load_image, save_matrix};
use fra_cli::runner::{run_batch, run_defend_eval, run_sweep};
use std::path::PathBuf;
use std::process::ExitCode;

/// Frequency-regularized alignment attack runner.
#[derive(Parser)]
#[command(name = "fra", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scalar overrides; each flag mirrors a config key one-to-one
/// (`section.key` becomes `--section-key`). List-valued sections
/// ([encoder], [holdout], [defense]) live in the config file; pairs can
/// additionally be appended with repeated `--pair src,tgt`.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file (documented key = value format); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    attack_epsilon: Option<String>,
    #[arg(long)]
    attack_alpha: Option<String>,
    #[arg(long)]
    attack_iters: Option<String>,
    #[arg(long)]
    attack_theta: Option<String>,
    #[arg(long)]
    attack_n: Option<String>,
    #[arg(long)]
    attack_w_g: Option<String>,
    #[arg(long)]
    attack_w_l: Option<String>,
    #[arg(long)]
    attack_lambda: Option<String>,
    #[arg(long)]
    attack_mu: Option<String>,
    #[arg(long)]
    attack_temperature: Option<String>,
    #[arg(long)]
    attack_optimizer: Option<String>,
    #[arg(long)]
    attack_fgr_kind: Option<String>,
    #[arg(long)]
    attack_fgr_p: Option<String>,
    #[arg(long)]
    attack_fgr_beta: Option<String>,
    #[arg(long)]
    attack_fgr_center: Option<String>,
    #[arg(long)]
    attack_fgr_tau_low: Option<String>,
    #[arg(long)]
    attack_fgr_tau_high: Option<String>,
    #[arg(long)]
    attack_fgr_gamma: Option<String>,
    #[arg(long)]
    attack_fgr_keep: Option<String>,
    #[arg(long)]
    attack_sinkhorn_max_iters: Option<String>,
    #[arg(long)]
    attack_sinkhorn_tol: Option<String>,
    #[arg(long)]
    attack_adam_beta1: Option<String>,
    #[arg(long)]
    attack_adam_beta2: Option<String>,
    #[arg(long)]
    attack_adam_eps: Option<String>,

    #[arg(long)]
    run_output_dir: Option<String>,
    #[arg(long)]
    run_parallelism: Option<String>,
    #[arg(long)]
    run_master_seed: Option<String>,

    /// Append a source,target pair (repeatable).
    #[arg(long, value_name = "SRC,TGT")]
    pair: Vec<String>,

    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    print_effective_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the attack over all configured pairs and write reports.
    Attack(ConfigArgs),
    /// Vary one attack key over a value list with pairs held fixed.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Swept key, e.g. attack.fgr-p (overrides the [sweep] section).
        #[arg(long)]
        sweep_key: Option<String>,
        /// Comma-separated values for the swept key.
        #[arg(long)]
        sweep_values: Option<String>,
    },
    /// Re-evaluate saved adversarial images under the configured defenses.
    DefendEval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding adv_NNNN images (defaults to run.output-dir).
        #[arg(long)]
        adv_dir: Option<PathBuf>,
    },
    /// Export the per-patch high-frequency energy map of one image.
    EnergyMap {
        #[command(flatten)]
        config: ConfigArgs,
        /// Image to analyze.
        #[arg(long)]
        image: PathBuf,
        /// Index into the configured ensemble.
        #[arg(long, default_value_t = 0)]
        encoder_index: usize,
        /// Frequency threshold (defaults to the attack theta).
        #[arg(long)]
        theta: Option<usize>,
        /// Component count (defaults to the attack n).
        #[arg(long)]
        n: Option<usize>,
        /// Output FRAT file.
        #[arg(long, default_value = "energy-map.frat")]
        output: PathBuf,
    },
    /// Run the built-in property battery.
    Selfcheck {
        #[arg(long, default_value_t = 2026)]
        seed: u64,
    },
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    // Defaults < file < environment < flags.
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var("FRA_OUTPUT_DIR") {
        if !dir.is_empty() {
            config.output_dir = PathBuf::from(dir);
        }
    }
    let overrides: [(&str, &Option<String>); 27] = [
        ("attack.epsilon", &args.attack_epsilon),
        ("attack.alpha", &args.attack_alpha),
        ("attack.iters", &args.attack_iters),
        ("attack.theta", &args.attack_theta),
        ("attack.n", &args.attack_n),
        ("attack.w-g", &args.attack_w_g),
        ("attack.w-l", &args.attack_w_l),
        ("attack.lambda", &args.attack_lambda),
        ("attack.mu", &args.attack_mu),
        ("attack.temperature", &args.attack_temperature),
        ("attack.optimizer", &args.attack_optimizer),
        ("attack.fgr-kind", &args.attack_fgr_kind),
        ("attack.fgr-p", &args.attack_fgr_p),
        ("attack.fgr-beta", &args.attack_fgr_beta),
        ("attack.fgr-center", &args.attack_fgr_center),
        ("attack.fgr-tau-low", &args.attack_fgr_tau_low),
        ("attack.fgr-tau-high", &args.attack_fgr_tau_high),
        ("attack.fgr-gamma", &args.attack_fgr_gamma),
        ("attack.fgr-keep", &args.attack_fgr_keep),
        ("attack.sinkhorn-max-iters", &args.attack_sinkhorn_max_iters),
        ("attack.sinkhorn-tol", &args.attack_sinkhorn_tol),
        ("attack.adam-beta1", &args.attack_adam_beta1),
        ("attack.adam-beta2", &args.attack_adam_beta2),
        ("attack.adam-eps", &args.attack_adam_eps),
        ("run.output-dir", &args.run_output_dir),
        ("run.parallelism", &args.run_parallelism),
        ("run.master-seed", &args.run_master_seed),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            apply_override(&mut config, key, v)?;
        }
    }
    for pair in &args.pair {
        let (src, tgt) = pair.split_once(',').ok_or_else(|| {
            CliError::ConfigGeneral(format!("--pair needs `src,tgt`, got `{pair}`"))
        })?;
        config
            .pairs
            .push((PathBuf::from(src.trim()), PathBuf::from(tgt.trim())));
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Attack(args) => {
            let config = resolve_config(&args)?;
            if args.print_effective_config {
                print!("{}", render_config(&config));
                return Ok(true);
            }
            let summary = run_batch(&config)?;
            println!(
                "attack: {} pairs completed, {} failed; metrics at {}",
                summary.completed,
                summary.failed,
                summary.metrics_path.display()
            );
            Ok(summary.failed == 0)
        }
        Command::Sweep {
            config: args,
            sweep_key,
            sweep_values,
        } => {
            let mut config = resolve_config(&args)?;
            if let (Some(key), Some(values)) = (&sweep_key, &sweep_values) {
                config.sweep = Some(SweepSpec {
                    key: key.clone(),
                    values: values.split(',').map(|v| v.trim().to_string()).collect(),
                });
            }
            if args.print_effective_config {
                print!("{}", render_config(&config));
                return Ok(true);
            }
            let cells = run_sweep(&config)?;
            for cell in &cells {
                println!(
                    "sweep cell {}: {} completed, {} failed -> {}",
                    cell.value,
                    cell.summary.completed,
                    cell.summary.failed,
                    cell.output_dir.display()
                );
            }
            println!(
                "sweep summary at {}",
                config.output_dir.join("sweep-summary.csv").display()
            );
            Ok(true)
        }
        Command::DefendEval {
            config: args,
            adv_dir,
        } => {
            let config = resolve_config(&args)?;
            let adv_dir = adv_dir.unwrap_or_else(|| config.output_dir.clone());
            let summary = run_defend_eval(&config, &adv_dir)?;
            println!(
                "defend-eval: {} pairs completed, {} failed; metrics at {}",
                summary.completed,
                summary.failed,
                summary.metrics_path.display()
            );
            Ok(summary.failed == 0)
        }
        Command::EnergyMap {
            config: args,
            image,
            encoder_index,
            theta,
            n,
            output,
        } => {
            let config = resolve_config(&args)?;
            let spec = config.ensemble.get(encoder_index).ok_or_else(|| {
                CliError::ConfigGeneral(format!(
                    "encoder index {encoder_index} out of range ({} configured)",
                    config.ensemble.len()
                ))
            })?;
            let img = load_image(&image)?;
            let map = fra_core::evaluation::energy_map(
                &img,
                spec,
                theta.unwrap_or(config.attack.theta),
                n.unwrap_or(config.attack.n_components),
            )?;
            save_matrix(&output, &map)?;
            println!(
                "energy-map: {}x{} grid written to {}",
                map.rows(),
                map.cols(),
                output.display()
            );
            Ok(true)
        }
        Command::Selfcheck { seed } => {
            let results = fra_core::selfcheck::run_all(seed);
            let mut all_passed = true;
            for result in &results {
                let tag = if result.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} - {}", result.name, result.detail);
                all_passed &= result.passed;
            }
            Ok(all_passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
