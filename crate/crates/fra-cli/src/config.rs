//! Run configuration: a line-oriented `key = value` format with `[section]`
//! headers, strict about unknown keys and invariant violations.
//!
//! Sections: `[attack]` and `[run]` hold scalars; `[encoder]`, `[holdout]`,
//! `[pair]`, and `[defense]` are repeatable and append one item each;
//! `[sweep]` names one attack key and a value list. Numeric fields accept
//! plain literals or `a/b` fractions (so budgets read naturally as 16/255).
//! `#` starts a comment. CLI flags override file values via the same
//! `section.key` names with dots turned into dashes (`attack.epsilon`
//! becomes `--attack-epsilon`); the `FRA_OUTPUT_DIR` environment variable
//! sits between the file and the flags for `run.output-dir`.
//!
//! With no file at all the defaults reproduce the reference hyperparameters
//! on a two-encoder toy ensemble with one disjoint-seed holdout.

use crate::error::{CliError, Result};
use fra_core::attack::{AttackConfig, Optimizer};
use fra_core::defenses::DefenseSpec;
use fra_core::encoders::{EncoderKind, EncoderSpec};
use fra_core::spectral::RadialFilter;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Attack key in `section.key` form, e.g. `attack.fgr-p`.
    pub key: String,
    /// Raw value literals, applied one per sweep cell.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub attack: AttackConfig,
    pub ensemble: Vec<EncoderSpec>,
    pub holdouts: Vec<EncoderSpec>,
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub defenses: Vec<DefenseSpec>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub master_seed: u64,
    pub sweep: Option<SweepSpec>,
}

/// Default toy surrogate ensemble: heterogeneous in kind, patch size,
/// embedding width, and seed, for 32x32x3 inputs.
pub fn default_ensemble() -> Vec<EncoderSpec> {
    vec![
        EncoderSpec {
            kind: EncoderKind::LinearPatch,
            patch_size: 2,
            embed_dim: 16,
            seed: 101,
            input: (32, 32, 3),
        },
        EncoderSpec {
            kind: EncoderKind::Attention1Layer,
            patch_size: 4,
            embed_dim: 24,
            seed: 202,
            input: (32, 32, 3),
        },
    ]
}

/// Default disjoint-seed holdout encoder. Its patch grid is coarser than
/// every surrogate's, so its global feature retains inter-patch structure
/// that the surrogates' own global features fold away.
pub fn default_holdouts() -> Vec<EncoderSpec> {
    vec![EncoderSpec {
        kind: EncoderKind::LinearPatch,
        patch_size: 8,
        embed_dim: 64,
        seed: 909,
        input: (32, 32, 3),
    }]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            attack: AttackConfig::default(),
            ensemble: default_ensemble(),
            holdouts: default_holdouts(),
            pairs: Vec::new(),
            defenses: Vec::new(),
            output_dir: PathBuf::from("fra-out"),
            parallelism: 1,
            master_seed: 42,
            sweep: None,
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> CliError {
    CliError::Config {
        line,
        message: message.into(),
    }
}

fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64> {
    let parse_one = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| err(line, format!("key `{key}`: `{s}` is not a number")))
    };
    if let Some((num, den)) = value.split_once('/') {
        let d = parse_one(den)?;
        if d == 0.0 {
            return Err(err(line, format!("key `{key}`: division by zero")));
        }
        Ok(parse_one(num)? / d)
    } else {
        parse_one(value)
    }
}

fn parse_usize(value: &str, line: usize, key: &str) -> Result<usize> {
    value.trim().parse::<usize>().map_err(|_| {
        err(
            line,
            format!("key `{key}`: `{value}` is not a non-negative integer"),
        )
    })
}

fn parse_u64(value: &str, line: usize, key: &str) -> Result<u64> {
    value
        .trim()
        .parse::<u64>()
        .map_err(|_| err(line, format!("key `{key}`: `{value}` is not a seed value")))
}

fn parse_triple(value: &str, line: usize, key: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(err(
            line,
            format!("key `{key}`: expected three comma-separated values"),
        ));
    }
    Ok([
        parse_f64(parts[0], line, key)?,
        parse_f64(parts[1], line, key)?,
        parse_f64(parts[2], line, key)?,
    ])
}

fn parse_dims(value: &str, line: usize, key: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = value.split('x').collect();
    if parts.len() != 3 {
        return Err(err(
            line,
            format!("key `{key}`: expected HxWxC, e.g. 32x32x3"),
        ));
    }
    Ok((
        parse_usize(parts[0], line, key)?,
        parse_usize(parts[1], line, key)?,
        parse_usize(parts[2], line, key)?,
    ))
}

/// Apply one `[attack]` key. Kind-specific FGR parameters require the kind
/// to be selected first (`fgr-kind` installs that kind's defaults).
pub fn apply_attack_key(
    attack: &mut AttackConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<()> {
    match key {
        "epsilon" => attack.epsilon = parse_f64(value, line, key)?,
        "alpha" => attack.alpha = parse_f64(value, line, key)?,
        "iters" => attack.iters = parse_usize(value, line, key)?,
        "theta" => attack.theta = parse_usize(value, line, key)?,
        "n" => attack.n_components = parse_usize(value, line, key)?,
        "w-g" => attack.w_g = parse_f64(value, line, key)?,
        "w-l" => attack.w_l = parse_f64(value, line, key)?,
        "lambda" => attack.lambda = parse_f64(value, line, key)?,
        "mu" => attack.mu = parse_f64(value, line, key)?,
        "temperature" => attack.temperature = parse_f64(value, line, key)?,
        "sinkhorn-max-iters" => attack.sinkhorn_max_iters = parse_usize(value, line, key)?,
        "sinkhorn-tol" => attack.sinkhorn_tol = parse_f64(value, line, key)?,
        "adam-beta1" => attack.adam_beta1 = parse_f64(value, line, key)?,
        "adam-beta2" => attack.adam_beta2 = parse_f64(value, line, key)?,
        "adam-eps" => attack.adam_eps = parse_f64(value, line, key)?,
        "optimizer" => {
            attack.optimizer = Optimizer::parse(value.trim())
                .ok_or_else(|| err(line, format!("unknown optimizer `{value}`")))?;
        }
        "fgr-kind" => {
            attack.fgr = match value.trim() {
                "polynomial" => RadialFilter::Polynomial { p: 1.5 },
                "reciprocal" => RadialFilter::Reciprocal { beta: 2.0 },
                "sigmoid" => RadialFilter::Sigmoid {
                    beta: 6.0,
                    center: 0.5,
                },
                "band-clip" => RadialFilter::BandClip {
                    tau_low: 1.0 / 3.0,
                    tau_high: 2.0 / 3.0,
                    gamma: [1.5, 1.0, 0.5],
                },
                "top-k-sparse" => RadialFilter::TopKSparse {
                    keep_percent: [50.0, 30.0, 30.0],
                },
                "identity" => RadialFilter::Identity,
                other => return Err(err(line, format!("unknown fgr kind `{other}`"))),
            };
        }
        "fgr-p" => match &mut attack.fgr {
            RadialFilter::Polynomial { p } => *p = parse_f64(value, line, key)?,
            f => {
                return Err(err(
                    line,
                    format!("fgr-p applies to polynomial, not {}", f.kind_name()),
                ))
            }
        },
        "fgr-beta" => match &mut attack.fgr {
            RadialFilter::Reciprocal { beta } | RadialFilter::Sigmoid { beta, .. } => {
                *beta = parse_f64(value, line, key)?;
            }
            f => {
                return Err(err(
                    line,
                    format!(
                        "fgr-beta applies to reciprocal or sigmoid, not {}",
                        f.kind_name()
                    ),
                ))
            }
        },
        "fgr-center" => match &mut attack.fgr {
            RadialFilter::Sigmoid { center, .. } => *center = parse_f64(value, line, key)?,
            f => {
                return Err(err(
                    line,
                    format!("fgr-center applies to sigmoid, not {}", f.kind_name()),
                ))
            }
        },
        "fgr-tau-low" => match &mut attack.fgr {
            RadialFilter::BandClip { tau_low, .. } => *tau_low = parse_f64(value, line, key)?,
            f => {
                return Err(err(
                    line,
                    format!("fgr-tau-low applies to band-clip, not {}", f.kind_name()),
                ))
            }
        },
        "fgr-tau-high" => match &mut attack.fgr {
            RadialFilter::BandClip { tau_high, .. } => *tau_high = parse_f64(value, line, key)?,
            f => {
                return Err(err(
                    line,
                    format!("fgr-tau-high applies to band-clip, not {}", f.kind_name()),
                ))
            }
        },
        "fgr-gamma" => match &mut attack.fgr {
            RadialFilter::BandClip { gamma, .. } => *gamma = parse_triple(value, line, key)?,
            f => {
                return Err(err(
                    line,
                    format!("fgr-gamma applies to band-clip, not {}", f.kind_name()),
                ))
            }
        },
        "fgr-keep" => match &mut attack.fgr {
            RadialFilter::TopKSparse { keep_percent } => {
                *keep_percent = parse_triple(value, line, key)?;
            }
            f => {
                return Err(err(
                    line,
                    format!("fgr-keep applies to top-k-sparse, not {}", f.kind_name()),
                ))
            }
        },
        other => return Err(err(line, format!("unknown key `{other}` in [attack]"))),
    }
    attack
        .validate()
        .map_err(|e| err(line, format!("key `{key}`: {e}")))
}

#[derive(Default)]
struct EncoderDraft {
    kind: Option<EncoderKind>,
    patch_size: Option<usize>,
    embed_dim: Option<usize>,
    seed: Option<u64>,
    input: Option<(usize, usize, usize)>,
}

impl EncoderDraft {
    fn set(&mut self, key: &str, value: &str, line: usize, section: &str) -> Result<()> {
        match key {
            "kind" => {
                self.kind = Some(
                    EncoderKind::parse(value.trim())
                        .ok_or_else(|| err(line, format!("unknown encoder kind `{value}`")))?,
                );
            }
            "patch-size" => self.patch_size = Some(parse_usize(value, line, key)?),
            "embed-dim" => self.embed_dim = Some(parse_usize(value, line, key)?),
            "seed" => self.seed = Some(parse_u64(value, line, key)?),
            "input" => self.input = Some(parse_dims(value, line, key)?),
            other => return Err(err(line, format!("unknown key `{other}` in [{section}]"))),
        }
        Ok(())
    }

    fn build(self, line: usize) -> Result<EncoderSpec> {
        let spec = EncoderSpec {
            kind: self.kind.unwrap_or(EncoderKind::Attention1Layer),
            patch_size: self.patch_size.unwrap_or(4),
            embed_dim: self.embed_dim.unwrap_or(16),
            seed: self.seed.unwrap_or(1),
            input: self.input.unwrap_or((32, 32, 3)),
        };
        spec.validate().map_err(|e| err(line, format!("{e}")))?;
        Ok(spec)
    }
}

#[derive(Default)]
struct PairDraft {
    source: Option<PathBuf>,
    target: Option<PathBuf>,
}

impl PairDraft {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "source" => self.source = Some(PathBuf::from(value.trim())),
            "target" => self.target = Some(PathBuf::from(value.trim())),
            other => return Err(err(line, format!("unknown key `{other}` in [pair]"))),
        }
        Ok(())
    }

    fn build(self, line: usize) -> Result<(PathBuf, PathBuf)> {
        match (self.source, self.target) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(err(line, "a [pair] needs both `source` and `target`")),
        }
    }
}

#[derive(Default)]
struct DefenseDraft {
    kind: Option<String>,
    quality: Option<u32>,
    kernel: Option<usize>,
    sigma: Option<f64>,
    ratio: Option<f64>,
}

impl DefenseDraft {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "kind" => self.kind = Some(value.trim().to_string()),
            "quality" => {
                self.quality = Some(
                    value
                        .trim()
                        .parse()
                        .map_err(|_| err(line, format!("bad quality `{value}`")))?,
                )
            }
            "kernel" => self.kernel = Some(parse_usize(value, line, key)?),
            "sigma" => self.sigma = Some(parse_f64(value, line, key)?),
            "ratio" => self.ratio = Some(parse_f64(value, line, key)?),
            other => return Err(err(line, format!("unknown key `{other}` in [defense]"))),
        }
        Ok(())
    }

    fn build(self, line: usize) -> Result<DefenseSpec> {
        let spec = match self.kind.as_deref() {
            Some("jpeg-like") => DefenseSpec::JpegLike {
                quality: self.quality.unwrap_or(75),
            },
            Some("gaussian") => DefenseSpec::Gaussian {
                kernel: self.kernel.unwrap_or(5),
                sigma: self.sigma.unwrap_or(0.5),
            },
            Some("center-crop") => DefenseSpec::CenterCrop {
                ratio: self.ratio.unwrap_or(0.9),
            },
            Some(other) => return Err(err(line, format!("unknown defense kind `{other}`"))),
            None => return Err(err(line, "a [defense] needs a `kind`")),
        };
        spec.validate().map_err(|e| err(line, format!("{e}")))?;
        Ok(spec)
    }
}

enum Section {
    None,
    Attack,
    Run,
    Sweep,
    Encoder { draft: EncoderDraft, start: usize },
    Holdout { draft: EncoderDraft, start: usize },
    Pair { draft: PairDraft, start: usize },
    Defense { draft: DefenseDraft, start: usize },
}

/// Parse the documented config format into a fully validated [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let mut section = Section::None;
    // The first explicit section of each repeatable kind clears its default.
    let mut saw_encoder = false;
    let mut saw_holdout = false;
    let mut sweep_key: Option<String> = None;
    let mut sweep_values: Option<Vec<String>> = None;

    let mut finalize = |section: Section, config: &mut RunConfig| -> Result<()> {
        match section {
            Section::Encoder { draft, start } => {
                if !saw_encoder {
                    config.ensemble.clear();
                    saw_encoder = true;
                }
                config.ensemble.push(draft.build(start)?);
            }
            Section::Holdout { draft, start } => {
                if !saw_holdout {
                    config.holdouts.clear();
                    saw_holdout = true;
                }
                config.holdouts.push(draft.build(start)?);
            }
            Section::Pair { draft, start } => config.pairs.push(draft.build(start)?),
            Section::Defense { draft, start } => config.defenses.push(draft.build(start)?),
            _ => {}
        }
        Ok(())
    };

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let previous = std::mem::replace(&mut section, Section::None);
            finalize(previous, &mut config)?;
            section = match name.trim() {
                "attack" => Section::Attack,
                "run" => Section::Run,
                "sweep" => Section::Sweep,
                "encoder" => Section::Encoder {
                    draft: EncoderDraft::default(),
                    start: line_no,
                },
                "holdout" => Section::Holdout {
                    draft: EncoderDraft::default(),
                    start: line_no,
                },
                "pair" => Section::Pair {
                    draft: PairDraft::default(),
                    start: line_no,
                },
                "defense" => Section::Defense {
                    draft: DefenseDraft::default(),
                    start: line_no,
                },
                other => return Err(err(line_no, format!("unknown section `[{other}]`"))),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        match &mut section {
            Section::None => {
                return Err(err(
                    line_no,
                    format!("key `{key}` appears before any [section]"),
                ));
            }
            Section::Attack => apply_attack_key(&mut config.attack, key, value, line_no)?,
            Section::Run => match key {
                "output-dir" => config.output_dir = PathBuf::from(value),
                "parallelism" => {
                    config.parallelism = parse_usize(value, line_no, key)?;
                    if config.parallelism == 0 {
                        return Err(err(line_no, "parallelism must be at least 1"));
                    }
                }
                "master-seed" => config.master_seed = parse_u64(value, line_no, key)?,
                other => return Err(err(line_no, format!("unknown key `{other}` in [run]"))),
            },
            Section::Sweep => match key {
                "key" => sweep_key = Some(value.to_string()),
                "values" => {
                    sweep_values = Some(value.split(',').map(|v| v.trim().to_string()).collect());
                }
                other => return Err(err(line_no, format!("unknown key `{other}` in [sweep]"))),
            },
            Section::Encoder { draft, .. } => draft.set(key, value, line_no, "encoder")?,
            Section::Holdout { draft, .. } => draft.set(key, value, line_no, "holdout")?,
            Section::Pair { draft, .. } => draft.set(key, value, line_no)?,
            Section::Defense { draft, .. } => draft.set(key, value, line_no)?,
        }
    }
    finalize(section, &mut config)?;

    match (sweep_key, sweep_values) {
        (Some(key), Some(values)) => {
            if values.is_empty() {
                return Err(CliError::ConfigGeneral(
                    "[sweep] values list is empty".into(),
                ));
            }
            config.sweep = Some(SweepSpec { key, values });
        }
        (None, None) => {}
        _ => {
            return Err(CliError::ConfigGeneral(
                "[sweep] needs both `key` and `values`".into(),
            ))
        }
    }

    validate_config(&config)?;
    Ok(config)
}

/// Cross-field checks shared by parsing and overrides.
pub fn validate_config(config: &RunConfig) -> Result<()> {
    config.attack.validate().map_err(CliError::Core)?;
    for spec in config.ensemble.iter().chain(&config.holdouts) {
        spec.validate().map_err(CliError::Core)?;
    }
    for holdout in &config.holdouts {
        if config.ensemble.iter().any(|s| s.seed == holdout.seed) {
            return Err(CliError::ConfigGeneral(format!(
                "holdout seed {} collides with a surrogate seed",
                holdout.seed
            )));
        }
    }
    if let Some(sweep) = &config.sweep {
        if !sweep.key.starts_with("attack.") {
            return Err(CliError::ConfigGeneral(format!(
                "sweep key `{}` must name an attack key (attack.*)",
                sweep.key
            )));
        }
    }
    Ok(())
}

/// Apply one `section.key = value` override (CLI flags and sweep cells).
pub fn apply_override(config: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let (section, field) = key.split_once('.').ok_or_else(|| {
        CliError::ConfigGeneral(format!("override key `{key}` must look like section.key"))
    })?;
    match section {
        "attack" => apply_attack_key(&mut config.attack, field, value, 0)?,
        "run" => match field {
            "output-dir" => config.output_dir = PathBuf::from(value),
            "parallelism" => {
                config.parallelism = parse_usize(value, 0, field)?;
                if config.parallelism == 0 {
                    return Err(CliError::ConfigGeneral(
                        "parallelism must be at least 1".into(),
                    ));
                }
            }
            "master-seed" => config.master_seed = parse_u64(value, 0, field)?,
            other => {
                return Err(CliError::ConfigGeneral(format!(
                    "unknown run key `{other}`"
                )));
            }
        },
        other => {
            return Err(CliError::ConfigGeneral(format!(
                "overrides support attack.* and run.* keys, got `{other}.{field}`"
            )));
        }
    }
    Ok(())
}

fn fgr_lines(filter: &RadialFilter, out: &mut String) {
    use std::fmt::Write;
    writeln!(out, "fgr-kind = {}", filter.kind_name()).unwrap();
    match filter {
        RadialFilter::Polynomial { p } => writeln!(out, "fgr-p = {p}").unwrap(),
        RadialFilter::Reciprocal { beta } => writeln!(out, "fgr-beta = {beta}").unwrap(),
        RadialFilter::Sigmoid { beta, center } => {
            writeln!(out, "fgr-beta = {beta}").unwrap();
            writeln!(out, "fgr-center = {center}").unwrap();
        }
        RadialFilter::BandClip {
            tau_low,
            tau_high,
            gamma,
        } => {
            writeln!(out, "fgr-tau-low = {tau_low}").unwrap();
            writeln!(out, "fgr-tau-high = {tau_high}").unwrap();
            writeln!(out, "fgr-gamma = {}, {}, {}", gamma[0], gamma[1], gamma[2]).unwrap();
        }
        RadialFilter::TopKSparse { keep_percent } => {
            writeln!(
                out,
                "fgr-keep = {}, {}, {}",
                keep_percent[0], keep_percent[1], keep_percent[2]
            )
            .unwrap();
        }
        RadialFilter::Identity => {}
    }
}

/// Render the fully resolved configuration in the same parseable format;
/// `parse_config(render_config(c)) == c`.
pub fn render_config(config: &RunConfig) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let a = &config.attack;
    writeln!(out, "[attack]").unwrap();
    writeln!(out, "epsilon = {}", a.epsilon).unwrap();
    writeln!(out, "alpha = {}", a.alpha).unwrap();
    writeln!(out, "iters = {}", a.iters).unwrap();
    writeln!(out, "theta = {}", a.theta).unwrap();
    writeln!(out, "n = {}", a.n_components).unwrap();
    writeln!(out, "w-g = {}", a.w_g).unwrap();
    writeln!(out, "w-l = {}", a.w_l).unwrap();
    writeln!(out, "lambda = {}", a.lambda).unwrap();
    writeln!(out, "mu = {}", a.mu).unwrap();
    writeln!(out, "temperature = {}", a.temperature).unwrap();
    writeln!(out, "optimizer = {}", a.optimizer.name()).unwrap();
    fgr_lines(&a.fgr, &mut out);
    writeln!(out, "sinkhorn-max-iters = {}", a.sinkhorn_max_iters).unwrap();
    writeln!(out, "sinkhorn-tol = {}", a.sinkhorn_tol).unwrap();
    writeln!(out, "adam-beta1 = {}", a.adam_beta1).unwrap();
    writeln!(out, "adam-beta2 = {}", a.adam_beta2).unwrap();
    writeln!(out, "adam-eps = {}", a.adam_eps).unwrap();
    for (section, specs) in [("encoder", &config.ensemble), ("holdout", &config.holdouts)] {
        for spec in specs {
            writeln!(out, "\n[{section}]").unwrap();
            writeln!(out, "kind = {}", spec.kind.name()).unwrap();
            writeln!(out, "patch-size = {}", spec.patch_size).unwrap();
            writeln!(out, "embed-dim = {}", spec.embed_dim).unwrap();
            writeln!(out, "seed = {}", spec.seed).unwrap();
            writeln!(
                out,
                "input = {}x{}x{}",
                spec.input.0, spec.input.1, spec.input.2
            )
            .unwrap();
        }
    }
    for (source, target) in &config.pairs {
        writeln!(out, "\n[pair]").unwrap();
        writeln!(out, "source = {}", source.display()).unwrap();
        writeln!(out, "target = {}", target.display()).unwrap();
    }
    for defense in &config.defenses {
        writeln!(out, "\n[defense]").unwrap();
        writeln!(out, "kind = {}", defense.kind_name()).unwrap();
        match defense {
            DefenseSpec::JpegLike { quality } => writeln!(out, "quality = {quality}").unwrap(),
            DefenseSpec::Gaussian { kernel, sigma } => {
                writeln!(out, "kernel = {kernel}").unwrap();
                writeln!(out, "sigma = {sigma}").unwrap();
            }
            DefenseSpec::CenterCrop { ratio } => writeln!(out, "ratio = {ratio}").unwrap(),
        }
    }
    writeln!(out, "\n[run]").unwrap();
    writeln!(out, "output-dir = {}", config.output_dir.display()).unwrap();
    writeln!(out, "parallelism = {}", config.parallelism).unwrap();
    writeln!(out, "master-seed = {}", config.master_seed).unwrap();
    if let Some(sweep) = &config.sweep {
        writeln!(out, "\n[sweep]").unwrap();
        writeln!(out, "key = {}", sweep.key).unwrap();
        writeln!(out, "values = {}", sweep.values.join(", ")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_reference_defaults() {
        let config = parse_config("").unwrap();
        assert_eq!(config.attack, AttackConfig::default());
        assert!((config.attack.epsilon - 16.0 / 255.0).abs() < 1e-15);
        assert!((config.attack.alpha - 1.0 / 255.0).abs() < 1e-15);
        assert_eq!(config.attack.iters, 300);
        assert_eq!(config.attack.theta, 10);
        assert_eq!(config.attack.n_components, 10);
        assert_eq!(config.attack.fgr, RadialFilter::Polynomial { p: 1.5 });
        assert_eq!(config.ensemble.len(), 2);
        assert_eq!(config.holdouts.len(), 1);
        assert_eq!(config.parallelism, 1);
    }

    #[test]
    fn fractions_and_sections_parse() {
        let text = "\
[attack]
epsilon = 8/255
iters = 50
optimizer = pgd-adam

[pair]
source = a.ppm
target = b.ppm

[run]
parallelism = 4
";
        let config = parse_config(text).unwrap();
        assert!((config.attack.epsilon - 8.0 / 255.0).abs() < 1e-15);
        assert_eq!(config.attack.iters, 50);
        assert_eq!(config.attack.optimizer, Optimizer::PgdAdam);
        assert_eq!(config.pairs.len(), 1);
        assert_eq!(config.parallelism, 4);
    }

    #[test]
    fn band_clip_without_thresholds_gets_defaults() {
        let config = parse_config("[attack]\nfgr-kind = band-clip\n").unwrap();
        assert_eq!(
            config.attack.fgr,
            RadialFilter::BandClip {
                tau_low: 1.0 / 3.0,
                tau_high: 2.0 / 3.0,
                gamma: [1.5, 1.0, 0.5]
            }
        );
    }

    #[test]
    fn zero_epsilon_rejected_with_line() {
        let e = parse_config("[attack]\nepsilon = 0\n").unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("epsilon"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let e = parse_config("[attack]\nepsilonn = 0.1\n").unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("line 2") && msg.contains("epsilonn"), "{msg}");
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(parse_config("[attak]\n").is_err());
    }

    #[test]
    fn explicit_encoders_replace_defaults() {
        let text = "\
[encoder]
kind = linear-patch
patch-size = 4
embed-dim = 8
seed = 7
input = 16x16x3
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.ensemble.len(), 1);
        assert_eq!(config.ensemble[0].seed, 7);
        // Holdout defaults are untouched.
        assert_eq!(config.holdouts.len(), 1);
    }

    #[test]
    fn holdout_seed_collision_rejected() {
        let text = "\
[encoder]
seed = 5
[holdout]
seed = 5
";
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn render_parse_round_trip() {
        let text = "\
[attack]
epsilon = 8/255
fgr-kind = sigmoid
fgr-beta = 4.5

[encoder]
kind = linear-patch
seed = 3

[pair]
source = x.ppm
target = y.ppm

[defense]
kind = gaussian
sigma = 0.75

[run]
output-dir = results
master-seed = 77

[sweep]
key = attack.fgr-p
values = 0.5, 1.0
";
        let config = parse_config(text).unwrap();
        let rendered = render_config(&config);
        let reparsed = parse_config(&rendered).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn overrides_apply_in_section_key_form() {
        let mut config = RunConfig::default();
        apply_override(&mut config, "attack.epsilon", "4/255").unwrap();
        apply_override(&mut config, "run.parallelism", "8").unwrap();
        assert!((config.attack.epsilon - 4.0 / 255.0).abs() < 1e-15);
        assert_eq!(config.parallelism, 8);
        assert!(apply_override(&mut config, "bogus.key", "1").is_err());
    }

    #[test]
    fn fgr_param_for_wrong_kind_rejected() {
        let e = parse_config("[attack]\nfgr-beta = 3.0\n").unwrap_err();
        assert!(format!("{e}").contains("fgr-beta"));
    }

    #[test]
    fn sweep_requires_attack_key() {
        let text = "[sweep]\nkey = run.parallelism\nvalues = 1, 2\n";
        assert!(parse_config(text).is_err());
    }
}
