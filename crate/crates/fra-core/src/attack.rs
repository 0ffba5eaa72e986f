//! The full attack iteration: per-encoder losses on the perturbed source,
//! dynamic ensemble weighting, analytic input gradients, frequency-domain
//! gradient regularization, and the sign / momentum / Adam update with exact
//! L-infinity clipping.

use crate::alignment::{
    per_encoder_loss_adjoints, scatter_selection_adjoint, select_high_freq, HighFreqSelection,
    SinkhornParams,
};
use crate::encoders::{Encoder, EncoderOutput, EncoderSpec};
use crate::error::{FraError, Result, Warning};
use crate::spectral::{apply_fgr, DctBasis, RadialFilter, SpectralStack};
use crate::tensor::{ensure_finite, Image, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Single-sign steps without momentum.
    Fgsm,
    /// Momentum accumulation of the l1-normalized gradient, then a sign step.
    MiFgsm,
    /// Adam moments on the filtered gradient, followed by the same clip.
    PgdAdam,
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Fgsm => "fgsm",
            Optimizer::MiFgsm => "mi-fgsm",
            Optimizer::PgdAdam => "pgd-adam",
        }
    }

    pub fn parse(s: &str) -> Option<Optimizer> {
        match s {
            "fgsm" => Some(Optimizer::Fgsm),
            "mi-fgsm" => Some(Optimizer::MiFgsm),
            "pgd-adam" => Some(Optimizer::PgdAdam),
            _ => None,
        }
    }
}

/// Attack hyperparameters. `Default` is the reference configuration:
/// epsilon 16/255, alpha 1/255, 300 iterations, theta 10, n 10, w_g 1.0,
/// w_l 0.2, lambda 0.1, polynomial FGR with p 1.5, mu 1.0, temperature 1.0,
/// MI-FGSM.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iters: usize,
    pub theta: usize,
    pub n_components: usize,
    pub w_g: f64,
    pub w_l: f64,
    pub lambda: f64,
    pub fgr: RadialFilter,
    pub mu: f64,
    pub temperature: f64,
    pub optimizer: Optimizer,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 16.0 / 255.0,
            alpha: 1.0 / 255.0,
            iters: 300,
            theta: 10,
            n_components: 10,
            w_g: 1.0,
            w_l: 0.2,
            lambda: 0.1,
            fgr: RadialFilter::default_polynomial(),
            mu: 1.0,
            temperature: 1.0,
            optimizer: Optimizer::MiFgsm,
            sinkhorn_max_iters: 200,
            sinkhorn_tol: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 || self.epsilon > 1.0 {
            return Err(FraError::InvalidParam {
                name: "epsilon",
                reason: format!("budget must lie in (0, 1], got {}", self.epsilon),
            });
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(FraError::InvalidParam {
                name: "alpha",
                reason: format!("step size must be >= 0, got {}", self.alpha),
            });
        }
        if self.w_g < 0.0 || self.w_l < 0.0 {
            return Err(FraError::InvalidParam {
                name: "w_g/w_l",
                reason: "loss weights must be >= 0".to_string(),
            });
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(FraError::InvalidParam {
                name: "lambda",
                reason: format!("OT regularization must be > 0, got {}", self.lambda),
            });
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(FraError::InvalidParam {
                name: "temperature",
                reason: format!("softmax temperature must be > 0, got {}", self.temperature),
            });
        }
        if self.mu < 0.0 {
            return Err(FraError::InvalidParam {
                name: "mu",
                reason: format!("momentum decay must be >= 0, got {}", self.mu),
            });
        }
        self.fgr.validate()
    }

    pub fn sinkhorn_params(&self) -> SinkhornParams {
        SinkhornParams {
            lambda: self.lambda,
            max_iters: self.sinkhorn_max_iters,
            tol: self.sinkhorn_tol,
        }
    }
}

/// One trace record per attack iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iter: usize,
    /// Unweighted per-encoder losses L_j.
    pub losses: Vec<f64>,
    /// Dynamic ensemble weights W_j.
    pub weights: Vec<f64>,
    /// Weighted total loss.
    pub total: f64,
    /// l1 norm of the raw aggregated gradient.
    pub grad_l1: f64,
    /// l1 norm of the FGR-filtered gradient.
    pub filtered_grad_l1: f64,
    /// max |delta| after this iteration's update.
    pub delta_linf: f64,
    pub warnings: Vec<Warning>,
}

/// Evolving optimizer state. `momentum` doubles as the Adam first moment;
/// `second_moment` and `adam_steps` are only touched by the Adam path.
#[derive(Debug, Clone)]
pub struct AttackState {
    pub delta: Image,
    pub momentum: Image,
    pub second_moment: Image,
    pub prev_losses: Option<Vec<f64>>,
    pub trace: Vec<IterationRecord>,
    pub adam_steps: usize,
}

impl AttackState {
    pub fn new(shape: (usize, usize, usize)) -> Self {
        let (h, w, c) = shape;
        AttackState {
            delta: Image::zeros(h, w, c),
            momentum: Image::zeros(h, w, c),
            second_moment: Image::zeros(h, w, c),
            prev_losses: None,
            trace: Vec::new(),
            adam_steps: 0,
        }
    }
}

/// Improvement-ratio softmax weights `W = J * softmax(S / T)` with
/// `S_j = current_j / previous_j`; all-ones on the first iteration
/// (previous unset). A zero previous loss pins that ratio to 1 and records
/// a warning.
pub fn dynamic_weights(
    current: &[f64],
    previous: Option<&[f64]>,
    temperature: f64,
    warnings: &mut Vec<Warning>,
) -> Result<Vec<f64>> {
    let j = current.len();
    if j == 0 {
        return Err(FraError::InvalidParam {
            name: "current",
            reason: "need at least one encoder loss".to_string(),
        });
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(FraError::InvalidParam {
            name: "temperature",
            reason: format!("softmax temperature must be > 0, got {temperature}"),
        });
    }
    ensure_finite(current, "dynamic_weights current losses")?;
    let previous = match previous {
        None => return Ok(vec![1.0; j]),
        Some(p) => p,
    };
    if previous.len() != j {
        return Err(FraError::ShapeMismatch {
            what: "previous losses",
            expected: format!("{j}"),
            actual: format!("{}", previous.len()),
        });
    }
    ensure_finite(previous, "dynamic_weights previous losses")?;
    let ratios: Vec<f64> = current
        .iter()
        .zip(previous)
        .enumerate()
        .map(|(idx, (&cur, &prev))| {
            if prev == 0.0 {
                warnings.push(Warning::ZeroPreviousLoss { encoder: idx });
                1.0
            } else {
                cur / prev
            }
        })
        .collect();
    let max = ratios
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    let exps: Vec<f64> = ratios
        .iter()
        .map(|&v| (v / temperature - max).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| j as f64 * e / total).collect())
}

/// Per-run immutable context: built encoders, cached target features, and
/// cached token-DCT bases.
struct AttackContext {
    encoders: Vec<Encoder>,
    bases: Vec<DctBasis>,
    target_globals: Vec<Vec<f64>>,
    target_selections: Vec<HighFreqSelection>,
}

impl AttackContext {
    fn new(config: &AttackConfig, target: &Image, ensemble: &[EncoderSpec]) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(FraError::InvalidParam {
                name: "ensemble",
                reason: "surrogate ensemble must be non-empty".to_string(),
            });
        }
        let mut encoders = Vec::with_capacity(ensemble.len());
        let mut bases = Vec::with_capacity(ensemble.len());
        let mut target_globals = Vec::with_capacity(ensemble.len());
        let mut target_selections = Vec::with_capacity(ensemble.len());
        for spec in ensemble {
            let encoder = Encoder::new(spec.clone())?;
            let basis = DctBasis::new(spec.token_count());
            let out = encoder.forward(target)?;
            let stack = SpectralStack::from_coeffs(basis.dct_cols(&out.patches));
            let sel = select_high_freq(&stack, config.theta, config.n_components)?;
            encoders.push(encoder);
            bases.push(basis);
            target_globals.push(out.global);
            target_selections.push(sel);
        }
        Ok(AttackContext {
            encoders,
            bases,
            target_globals,
            target_selections,
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn step_with(
    ctx: &AttackContext,
    mut state: AttackState,
    config: &AttackConfig,
    source: &Image,
) -> Result<AttackState> {
    let iter = state.trace.len() + 1;
    let mut warnings = Vec::new();
    let adv = source.add_scaled(&state.delta, 1.0);

    // Per-encoder forward passes and losses on the perturbed source.
    let mut outputs: Vec<EncoderOutput> = Vec::with_capacity(ctx.encoders.len());
    let mut selections: Vec<HighFreqSelection> = Vec::with_capacity(ctx.encoders.len());
    let mut losses = Vec::with_capacity(ctx.encoders.len());
    let mut parts_per_encoder = Vec::with_capacity(ctx.encoders.len());
    for (j, encoder) in ctx.encoders.iter().enumerate() {
        let out = encoder.forward(&adv)?;
        let stack = SpectralStack::from_coeffs(ctx.bases[j].dct_cols(&out.patches));
        let sel = select_high_freq(&stack, config.theta, config.n_components)?;
        let parts = crate::alignment::per_encoder_loss(
            &out.global,
            &ctx.target_globals[j],
            &sel,
            &ctx.target_selections[j],
            config.w_g,
            config.w_l,
            config.sinkhorn_params(),
            &mut warnings,
        )?;
        losses.push(parts.total);
        outputs.push(out);
        selections.push(sel);
        parts_per_encoder.push(parts);
    }

    let weights = dynamic_weights(
        &losses,
        state.prev_losses.as_deref(),
        config.temperature,
        &mut warnings,
    )?;
    let total: f64 = losses.iter().zip(&weights).map(|(l, w)| l * w).sum();

    // Weighted input gradient via the detached-plan adjoints.
    let (h, w, c) = source.shape();
    let mut gradient = Image::zeros(h, w, c);
    for (j, encoder) in ctx.encoders.iter().enumerate() {
        let (d_global, d_selected) = per_encoder_loss_adjoints(
            &outputs[j].global,
            &ctx.target_globals[j],
            &selections[j],
            &ctx.target_selections[j],
            &parts_per_encoder[j].plan,
            config.w_g,
            config.w_l,
        )?;
        let coeff_adjoint =
            scatter_selection_adjoint(&selections[j], &d_selected, encoder.spec().token_count());
        let d_patches = ctx.bases[j].idct_cols(&coeff_adjoint);
        let encoder_grad = encoder.input_gradient(&outputs[j], &d_global, &d_patches)?;
        gradient = gradient.add_scaled(&encoder_grad, weights[j]);
    }
    let grad_l1 = gradient.l1_norm();

    let filtered = apply_fgr(&Tensor4::from_image(&gradient), &config.fgr)?.into_image();
    let filtered_l1 = filtered.l1_norm();

    if filtered_l1 == 0.0 {
        warnings.push(Warning::VanishingGradient { iter });
    } else {
        match config.optimizer {
            Optimizer::MiFgsm => {
                state.momentum =
                    state
                        .momentum
                        .scale_then_add(config.mu, &filtered, 1.0 / filtered_l1);
                apply_sign_step(
                    &mut state.delta,
                    &state.momentum,
                    config.alpha,
                    config.epsilon,
                );
            }
            Optimizer::Fgsm => {
                apply_sign_step(&mut state.delta, &filtered, config.alpha, config.epsilon);
            }
            Optimizer::PgdAdam => {
                state.adam_steps += 1;
                let t = state.adam_steps as i32;
                let (b1, b2) = (config.adam_beta1, config.adam_beta2);
                for i in 0..state.momentum.data().len() {
                    let g = filtered.data()[i];
                    let m1 = b1 * state.momentum.data()[i] + (1.0 - b1) * g;
                    let m2 = b2 * state.second_moment.data()[i] + (1.0 - b2) * g * g;
                    state.momentum.data_mut()[i] = m1;
                    state.second_moment.data_mut()[i] = m2;
                    let m1_hat = m1 / (1.0 - b1.powi(t));
                    let m2_hat = m2 / (1.0 - b2.powi(t));
                    let d = state.delta.data()[i]
                        - config.alpha * m1_hat / (m2_hat.sqrt() + config.adam_eps);
                    state.delta.data_mut()[i] = d.clamp(-config.epsilon, config.epsilon);
                }
            }
        }
    }

    state.trace.push(IterationRecord {
        iter,
        losses: losses.clone(),
        weights,
        total,
        grad_l1,
        filtered_grad_l1: filtered_l1,
        delta_linf: state.delta.linf_norm(),
        warnings,
    });
    state.prev_losses = Some(losses);
    Ok(state)
}

fn apply_sign_step(delta: &mut Image, direction: &Image, alpha: f64, epsilon: f64) {
    for (d, &m) in delta.data_mut().iter_mut().zip(direction.data()) {
        *d = (*d - alpha * sign(m)).clamp(-epsilon, epsilon);
    }
}

/// Run one attack iteration. Target features are recomputed internally; for
/// whole runs prefer [`run_attack`], which caches them.
pub fn step(
    state: AttackState,
    config: &AttackConfig,
    source: &Image,
    target: &Image,
    ensemble: &[EncoderSpec],
) -> Result<AttackState> {
    config.validate()?;
    check_pair(source, target)?;
    let ctx = AttackContext::new(config, target, ensemble)?;
    step_with(&ctx, state, config, source)
}

fn check_pair(source: &Image, target: &Image) -> Result<()> {
    if !source.same_shape(target) {
        return Err(FraError::ShapeMismatch {
            what: "source/target images",
            expected: format!("{:?}", source.shape()),
            actual: format!("{:?}", target.shape()),
        });
    }
    ensure_finite(source.data(), "source image")?;
    ensure_finite(target.data(), "target image")?;
    Ok(())
}

/// Run the configured number of iterations and return the clamped
/// adversarial image together with the full per-iteration trace.
pub fn run_attack(
    source: &Image,
    target: &Image,
    config: &AttackConfig,
    ensemble: &[EncoderSpec],
) -> Result<(Image, Vec<IterationRecord>)> {
    config.validate()?;
    check_pair(source, target)?;
    let ctx = AttackContext::new(config, target, ensemble)?;
    let mut state = AttackState::new(source.shape());
    for _ in 0..config.iters {
        state = step_with(&ctx, state, config, source)?;
        debug_assert!(state.delta.linf_norm() <= config.epsilon);
    }
    let adversarial = source.add_scaled(&state.delta, 1.0).clamp01();
    Ok((adversarial, state.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderKind;
    use crate::rng::Rng;

    fn toy_ensemble() -> Vec<EncoderSpec> {
        vec![
            EncoderSpec {
                kind: EncoderKind::LinearPatch,
                patch_size: 2,
                embed_dim: 8,
                seed: 101,
                input: (8, 8, 3),
            },
            EncoderSpec {
                kind: EncoderKind::Attention1Layer,
                patch_size: 2,
                embed_dim: 6,
                seed: 202,
                input: (8, 8, 3),
            },
        ]
    }

    fn toy_config() -> AttackConfig {
        AttackConfig {
            theta: 3,
            n_components: 4,
            iters: 5,
            ..AttackConfig::default()
        }
    }

    fn random_image(seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        let mut img = Image::zeros(8, 8, 3);
        for v in img.data_mut() {
            *v = rng.next_f64();
        }
        img
    }

    #[test]
    fn first_iteration_weights_are_ones() {
        let mut warnings = Vec::new();
        let w = dynamic_weights(&[0.5, 0.25, 4.0], None, 1.0, &mut warnings).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn equal_ratios_give_unit_weights() {
        let mut warnings = Vec::new();
        let w =
            dynamic_weights(&[2.0, 4.0, 8.0], Some(&[1.0, 2.0, 4.0]), 1.0, &mut warnings).unwrap();
        for v in w {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_weights_match_hand_derivation() {
        // S = (2, 1), T = 1: W = 2 * softmax(2, 1) = (2e/(e+1), 2/(e+1)).
        let mut warnings = Vec::new();
        let w = dynamic_weights(&[2.0, 1.0], Some(&[1.0, 1.0]), 1.0, &mut warnings).unwrap();
        let e = std::f64::consts::E;
        assert!((w[0] - 2.0 * e / (e + 1.0)).abs() < 1e-12);
        assert!((w[1] - 2.0 / (e + 1.0)).abs() < 1e-12);
        assert!((w[0] - 1.462_117_157_260_01).abs() < 1e-12);
        assert!((w[1] - 0.537_882_842_739_99).abs() < 1e-12);
        assert!((w[0] + w[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_previous_loss_pins_ratio_with_warning() {
        let mut warnings = Vec::new();
        let w = dynamic_weights(&[2.0, 1.0], Some(&[0.0, 1.0]), 1.0, &mut warnings).unwrap();
        assert_eq!(warnings, vec![Warning::ZeroPreviousLoss { encoder: 0 }]);
        // Both ratios end up 1, so both weights are 1.
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_leaves_delta_untouched_but_records_losses() {
        let config = AttackConfig {
            alpha: 0.0,
            ..toy_config()
        };
        let source = random_image(1);
        let target = random_image(2);
        let state = AttackState::new(source.shape());
        let state = step(state, &config, &source, &target, &toy_ensemble()).unwrap();
        assert!(state.delta.data().iter().all(|&v| v == 0.0));
        assert_eq!(state.trace.len(), 1);
        assert!(!state.trace[0].losses.is_empty());
    }

    #[test]
    fn clip_binds_when_epsilon_below_alpha() {
        let config = AttackConfig {
            alpha: 8.0 / 255.0,
            epsilon: 2.0 / 255.0,
            ..toy_config()
        };
        let source = random_image(3);
        let target = random_image(4);
        let state = AttackState::new(source.shape());
        let state = step(state, &config, &source, &target, &toy_ensemble()).unwrap();
        assert!((state.delta.linf_norm() - config.epsilon).abs() < 1e-15);
    }

    #[test]
    fn five_step_loss_descends_on_seeded_fixture() {
        // Regression fixture, not a universal claim.
        let config = toy_config();
        let source = random_image(5);
        let target = random_image(6);
        let (_, trace) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        assert_eq!(trace.len(), 5);
        for pair in trace.windows(2) {
            assert!(
                pair[1].total < pair[0].total,
                "loss did not descend: {} -> {}",
                pair[0].total,
                pair[1].total
            );
        }
    }

    #[test]
    fn zero_iterations_returns_source() {
        let config = AttackConfig {
            iters: 0,
            ..toy_config()
        };
        let source = random_image(7);
        let target = random_image(8);
        let (adv, trace) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        assert_eq!(adv, source);
        assert!(trace.is_empty());
    }

    #[test]
    fn source_equals_target_leaves_global_term_zero() {
        let config = toy_config();
        let source = random_image(9);
        let state = AttackState::new(source.shape());
        let state = step(state, &config, &source, &source, &toy_ensemble()).unwrap();
        // At t=1 the adversarial input IS the target, so each per-encoder
        // loss is exactly w_l times the residual OT loss; with w_l = 0.2 and
        // OT residual bounded by 2 the total sits in [0, 0.4 * J].
        for loss in &state.trace[0].losses {
            assert!(*loss >= 0.0 && *loss <= 2.0 * config.w_l + 1e-12);
        }
        assert!(state.delta.linf_norm() <= config.epsilon);
    }

    #[test]
    fn budget_respected_throughout() {
        let config = AttackConfig {
            iters: 12,
            ..toy_config()
        };
        let source = random_image(10);
        let target = random_image(11);
        let (adv, trace) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        for rec in &trace {
            assert!(rec.delta_linf <= config.epsilon);
        }
        assert!(adv.in_unit_range());
        assert!(adv.max_abs_diff(&source) <= config.epsilon + 1e-15);
    }

    #[test]
    fn weights_sum_to_ensemble_size_after_first_iteration() {
        let config = toy_config();
        let source = random_image(12);
        let target = random_image(13);
        let (_, trace) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        for rec in trace.iter().skip(1) {
            let sum: f64 = rec.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mi_fgsm_with_zero_mu_matches_fgsm_trajectory() {
        let source = random_image(14);
        let target = random_image(15);
        let mi = AttackConfig {
            mu: 0.0,
            optimizer: Optimizer::MiFgsm,
            iters: 3,
            ..toy_config()
        };
        let fg = AttackConfig {
            optimizer: Optimizer::Fgsm,
            ..mi.clone()
        };
        let (adv_mi, trace_mi) = run_attack(&source, &target, &mi, &toy_ensemble()).unwrap();
        let (adv_fg, trace_fg) = run_attack(&source, &target, &fg, &toy_ensemble()).unwrap();
        // sign(grad / |grad|_1) == sign(grad), so the trajectories coincide
        // bitwise once momentum decay is off.
        assert_eq!(adv_mi, adv_fg);
        for (a, b) in trace_mi.iter().zip(&trace_fg) {
            assert_eq!(a.delta_linf, b.delta_linf);
            assert_eq!(a.total, b.total);
        }
    }

    #[test]
    fn identity_fgr_matches_a_path_that_never_filters() {
        let source = random_image(16);
        let target = random_image(17);
        let config = AttackConfig {
            fgr: RadialFilter::Identity,
            iters: 3,
            ..toy_config()
        };
        let (adv, trace) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();

        // Reference path: the same loop with the FGR call removed outright.
        let ctx = AttackContext::new(&config, &target, &toy_ensemble()).unwrap();
        let mut state = AttackState::new(source.shape());
        for _ in 0..config.iters {
            let iter = state.trace.len() + 1;
            let mut warnings = Vec::new();
            let adv_img = source.add_scaled(&state.delta, 1.0);
            let mut losses = Vec::new();
            let mut grads: Vec<Image> = Vec::new();
            for (j, encoder) in ctx.encoders.iter().enumerate() {
                let out = encoder.forward(&adv_img).unwrap();
                let stack = SpectralStack::from_coeffs(ctx.bases[j].dct_cols(&out.patches));
                let sel = select_high_freq(&stack, config.theta, config.n_components).unwrap();
                let parts = crate::alignment::per_encoder_loss(
                    &out.global,
                    &ctx.target_globals[j],
                    &sel,
                    &ctx.target_selections[j],
                    config.w_g,
                    config.w_l,
                    config.sinkhorn_params(),
                    &mut warnings,
                )
                .unwrap();
                let (d_global, d_selected) = per_encoder_loss_adjoints(
                    &out.global,
                    &ctx.target_globals[j],
                    &sel,
                    &ctx.target_selections[j],
                    &parts.plan,
                    config.w_g,
                    config.w_l,
                )
                .unwrap();
                let coeff_adjoint =
                    scatter_selection_adjoint(&sel, &d_selected, encoder.spec().token_count());
                let d_patches = ctx.bases[j].idct_cols(&coeff_adjoint);
                grads.push(encoder.input_gradient(&out, &d_global, &d_patches).unwrap());
                losses.push(parts.total);
            }
            let weights = dynamic_weights(
                &losses,
                state.prev_losses.as_deref(),
                config.temperature,
                &mut warnings,
            )
            .unwrap();
            let mut gradient = Image::zeros(8, 8, 3);
            for (g, &w) in grads.iter().zip(&weights) {
                gradient = gradient.add_scaled(g, w);
            }
            // No apply_fgr call here.
            let l1 = gradient.l1_norm();
            if l1 != 0.0 {
                state.momentum = state
                    .momentum
                    .scale_then_add(config.mu, &gradient, 1.0 / l1);
                apply_sign_step(
                    &mut state.delta,
                    &state.momentum,
                    config.alpha,
                    config.epsilon,
                );
            } else {
                warnings.push(Warning::VanishingGradient { iter });
            }
            state.prev_losses = Some(losses);
            state.trace.push(IterationRecord {
                iter,
                losses: Vec::new(),
                weights: Vec::new(),
                total: 0.0,
                grad_l1: 0.0,
                filtered_grad_l1: 0.0,
                delta_linf: state.delta.linf_norm(),
                warnings: Vec::new(),
            });
        }
        let reference = source.add_scaled(&state.delta, 1.0).clamp01();
        assert_eq!(adv, reference);
        for (a, b) in trace.iter().zip(&state.trace) {
            assert_eq!(a.delta_linf, b.delta_linf);
        }
    }

    #[test]
    fn pgd_adam_stays_within_budget_and_descends() {
        let config = AttackConfig {
            optimizer: Optimizer::PgdAdam,
            iters: 6,
            ..toy_config()
        };
        let source = random_image(18);
        let target = random_image(19);
        let (adv, trace) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        assert!(adv.in_unit_range());
        for rec in &trace {
            assert!(rec.delta_linf <= config.epsilon);
        }
        assert!(trace.last().unwrap().total < trace[0].total);
    }

    #[test]
    fn deterministic_end_to_end() {
        let config = toy_config();
        let source = random_image(20);
        let target = random_image(21);
        let (a, _) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        let (b, _) = run_attack(&source, &target, &config, &toy_ensemble()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let config = toy_config();
        let source = random_image(22);
        let target = {
            let mut rng = Rng::new(23);
            let mut img = Image::zeros(4, 4, 3);
            for v in img.data_mut() {
                *v = rng.next_f64();
            }
            img
        };
        assert!(run_attack(&source, &target, &config, &toy_ensemble()).is_err());
    }

    #[test]
    fn empty_ensemble_rejected() {
        let config = toy_config();
        let source = random_image(24);
        let target = random_image(25);
        assert!(run_attack(&source, &target, &config, &[]).is_err());
    }
}
