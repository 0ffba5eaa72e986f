//! Built-in property battery and the frozen-loss gradient checker.
//!
//! The battery backs the CLI `selfcheck` subcommand; each check reruns one
//! of the crate's core guarantees on freshly generated seeded inputs. The
//! gradient checker is also the primitive behind the heavier acceptance
//! checks, so it lives here rather than in test code.

use crate::alignment::{
    cost_matrix, per_encoder_loss, per_encoder_loss_adjoints, scatter_selection_adjoint,
    select_high_freq, sinkhorn_with_checkpoints, SinkhornParams,
};
use crate::attack::{run_attack, AttackConfig};
use crate::defenses::{defend, DefenseSpec};
use crate::encoders::{Encoder, EncoderKind, EncoderSpec};
use crate::error::Result;
use crate::rng::Rng;
use crate::spectral::{
    apply_fgr_plane, dct2, dct_tokens, filter_spectrum, idct2, idct_tokens, spectral_energy_above,
    DctBasis, RadialFilter,
};
use crate::synth::smooth_image;
use crate::tensor::{dot, norm, Image, Matrix};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn ok(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: false,
            detail,
        }
    }

    fn from_bound(name: &'static str, worst: f64, bound: f64) -> Self {
        if worst <= bound {
            Self::ok(name, format!("worst {worst:.3e} <= {bound:.1e}"))
        } else {
            Self::fail(name, format!("worst {worst:.3e} exceeds {bound:.1e}"))
        }
    }
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

/// Round-trip and Parseval bounds for the 1-D token and 2-D plane
/// transforms on random instances.
pub fn check_transforms(seed: u64, instances: usize) -> CheckResult {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = 1 + rng.below(32);
        let d = 1 + rng.below(8);
        let e = random_matrix(&mut rng, p, d);
        let stack = dct_tokens(&e).unwrap();
        worst = worst.max(idct_tokens(&stack).max_abs_diff(&e));
        worst = worst.max((stack.coeffs().frobenius_norm() - e.frobenius_norm()).abs());

        let h = 1 + rng.below(16);
        let w = 1 + rng.below(16);
        let x = random_matrix(&mut rng, h, w);
        let coeffs = dct2(&x).unwrap();
        worst = worst.max(idct2(&coeffs).unwrap().max_abs_diff(&x));
        worst = worst.max((coeffs.frobenius_norm() - x.frobenius_norm()).abs());
    }
    CheckResult::from_bound("dct-round-trip-parseval", worst, 1e-10)
}

/// Row 0 equals sqrt(P) times the mean embedding, and rows k >= 1 are
/// invariant to a constant token shift.
pub fn check_dc_and_shift_claims(seed: u64, instances: usize) -> CheckResult {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = 1 + rng.below(48);
        let d = 1 + rng.below(6);
        let e = random_matrix(&mut rng, p, d);
        let stack = dct_tokens(&e).unwrap();
        for c in 0..d {
            let mean = (0..p).map(|k| e.get(k, c)).sum::<f64>() / p as f64;
            worst = worst.max((stack.coeffs().get(0, c) - (p as f64).sqrt() * mean).abs());
        }
        let shift = rng.uniform(-2.0, 2.0);
        let shifted = Matrix::from_fn(p, d, |r, c| e.get(r, c) + shift);
        let shifted_stack = dct_tokens(&shifted).unwrap();
        for k in 1..p {
            for c in 0..d {
                worst =
                    worst.max((stack.coeffs().get(k, c) - shifted_stack.coeffs().get(k, c)).abs());
            }
        }
    }
    CheckResult::from_bound("spectrum-dc-and-shift-claims", worst, 1e-12)
}

/// Smooth radial filters preserve the ratio of equal-radius coefficients:
/// the modulated spectrum multiplies both members of a radial pair by the
/// identical factor.
pub fn check_phase_preservation(seed: u64, instances: usize) -> CheckResult {
    let mut rng = Rng::new(seed);
    let kinds = [
        RadialFilter::Polynomial { p: 1.5 },
        RadialFilter::Reciprocal { beta: 2.0 },
        RadialFilter::Sigmoid {
            beta: 6.0,
            center: 0.5,
        },
    ];
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let size = 4 + rng.below(8);
        let coeffs = dct2(&random_matrix(&mut rng, size, size)).unwrap();
        for filter in &kinds {
            let filtered = filter_spectrum(&coeffs, filter).unwrap();
            // (u, v) vs (v, u) lie on the same radial circle of a square grid.
            for u in 0..size {
                for v in 0..u {
                    let g2 = coeffs.get(v, u);
                    if g2 == 0.0 {
                        continue;
                    }
                    let before = coeffs.get(u, v) / g2;
                    let after = filtered.get(u, v) / filtered.get(v, u);
                    worst = worst.max((before - after).abs() / before.abs().max(1.0));
                }
            }
        }
    }
    CheckResult::from_bound("radial-filter-phase-preservation", worst, 1e-12)
}

/// Deterministic gradient for which band-clip visibly distorts the spatial
/// direction while the polynomial decay does not.
pub fn band_clip_counterexample() -> (f64, Matrix) {
    // Outlier coefficients in every band over a small noise floor.
    let mut coeffs = Matrix::from_fn(8, 8, |u, v| 0.01 * ((u * 8 + v) as f64).sin());
    coeffs.set(0, 0, 4.0);
    coeffs.set(2, 1, 3.0); // low band
    coeffs.set(3, 3, -3.5); // mid band
    coeffs.set(5, 4, 2.5); // mid band
    coeffs.set(7, 7, -2.0); // high band
    let gradient = idct2(&coeffs).unwrap();
    let band = apply_fgr_plane(
        &gradient,
        &RadialFilter::BandClip {
            tau_low: 1.0 / 3.0,
            tau_high: 2.0 / 3.0,
            gamma: [1.5, 1.0, 0.5],
        },
    )
    .unwrap();
    let poly = apply_fgr_plane(&gradient, &RadialFilter::Polynomial { p: 1.5 }).unwrap();
    let cosine = dot(band.data(), poly.data()) / (norm(band.data()) * norm(poly.data()));
    (cosine, gradient)
}

pub fn check_band_clip_distorts_direction() -> CheckResult {
    let (cosine, _) = band_clip_counterexample();
    if cosine < 1.0 - 1e-6 {
        CheckResult::ok(
            "band-clip-direction-distortion",
            format!("cosine {cosine:.6} < 1"),
        )
    } else {
        CheckResult::fail(
            "band-clip-direction-distortion",
            format!("cosine {cosine:.8} too close to 1"),
        )
    }
}

/// Plan marginals and objective agreement with a long-run dense fixed-point
/// solver on random cost matrices.
pub fn check_sinkhorn(seed: u64, instances: usize) -> CheckResult {
    let mut rng = Rng::new(seed);
    let mut worst_marginal: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..instances {
        let n = 3 + rng.below(6);
        let cost = Matrix::from_fn(n, n, |_, _| rng.uniform(0.0, 2.0));
        // Run-to-convergence budget; hard random instances at lambda = 0.1
        // can need a few thousand iterations to reach the 1e-6 residual.
        let params = SinkhornParams {
            lambda: 0.1,
            max_iters: 10_000,
            tol: 1e-6,
        };
        let (plan, checkpoints) = sinkhorn_with_checkpoints(&cost, params).unwrap();
        worst_marginal = worst_marginal.max(plan.marginal_residual());
        let reference = dense_sinkhorn_objective(&cost, 0.1, 10_000);
        let rel = (plan.objective() - reference).abs() / reference.abs().max(1e-12);
        worst_rel = worst_rel.max(rel);
        // The dual rises monotonically under exact block ascent.
        for pair in checkpoints.windows(2) {
            if pair[1].dual_objective < pair[0].dual_objective - 1e-8 {
                return CheckResult::fail(
                    "sinkhorn-fidelity",
                    format!(
                        "dual fell {} -> {}",
                        pair[0].dual_objective, pair[1].dual_objective
                    ),
                );
            }
        }
    }
    if worst_marginal <= 1e-6 && worst_rel <= 0.02 {
        CheckResult::ok(
            "sinkhorn-fidelity",
            format!("marginal {worst_marginal:.2e}, objective rel err {worst_rel:.2e}"),
        )
    } else {
        CheckResult::fail(
            "sinkhorn-fidelity",
            format!("marginal {worst_marginal:.2e}, objective rel err {worst_rel:.2e}"),
        )
    }
}

/// Plain dense fixed-point Sinkhorn objective after a fixed iteration
/// budget; the independent long-run reference.
#[allow(clippy::needless_range_loop)]
pub fn dense_sinkhorn_objective(cost: &Matrix, lambda: f64, iters: usize) -> f64 {
    let n = cost.rows();
    let a = 1.0 / n as f64;
    let k = Matrix::from_fn(n, n, |i, j| (-cost.get(i, j) / lambda).exp());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for _ in 0..iters {
        for i in 0..n {
            let kv: f64 = (0..n).map(|j| k.get(i, j) * v[j]).sum();
            u[i] = a / kv;
        }
        for j in 0..n {
            let ktu: f64 = (0..n).map(|i| k.get(i, j) * u[i]).sum();
            v[j] = a / ktu;
        }
    }
    let mut objective = 0.0;
    for i in 0..n {
        for j in 0..n {
            objective += u[i] * k.get(i, j) * v[j] * cost.get(i, j);
        }
    }
    objective
}

/// Report of a frozen-surrogate gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Coordinates checked against the relative-error bound.
    pub relative_samples: usize,
    pub max_rel_err: f64,
    /// Coordinates with |analytic| < 1e-8, held to an absolute bound instead.
    pub small_samples: usize,
    pub max_abs_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, rel_bound: f64, abs_bound: f64) -> bool {
        self.max_rel_err < rel_bound && self.max_abs_err < abs_bound
    }
}

/// Central-finite-difference validation of the analytic input gradient of
/// the composite loss, against the frozen-plan, frozen-selection surrogate
/// (the function the detached-plan backward pass differentiates exactly).
pub fn frozen_loss_gradient_check(
    spec: &EncoderSpec,
    source: &Image,
    target: &Image,
    config: &AttackConfig,
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let encoder = Encoder::new(spec.clone())?;
    let basis = DctBasis::new(spec.token_count());
    let mut warnings = Vec::new();

    let target_out = encoder.forward(target)?;
    let target_stack =
        crate::spectral::SpectralStack::from_coeffs(basis.dct_cols(&target_out.patches));
    let target_sel = select_high_freq(&target_stack, config.theta, config.n_components)?;

    let source_out = encoder.forward(source)?;
    let source_stack =
        crate::spectral::SpectralStack::from_coeffs(basis.dct_cols(&source_out.patches));
    let source_sel = select_high_freq(&source_stack, config.theta, config.n_components)?;
    let parts = per_encoder_loss(
        &source_out.global,
        &target_out.global,
        &source_sel,
        &target_sel,
        config.w_g,
        config.w_l,
        config.sinkhorn_params(),
        &mut warnings,
    )?;

    // Analytic gradient at the expansion point.
    let (d_global, d_selected) = per_encoder_loss_adjoints(
        &source_out.global,
        &target_out.global,
        &source_sel,
        &target_sel,
        &parts.plan,
        config.w_g,
        config.w_l,
    )?;
    let coeff_adjoint = scatter_selection_adjoint(&source_sel, &d_selected, spec.token_count());
    let d_patches = basis.idct_cols(&coeff_adjoint);
    let analytic = encoder.input_gradient(&source_out, &d_global, &d_patches)?;

    // Frozen surrogate: plan and selected indices pinned, everything else
    // recomputed from the perturbed image.
    let frozen_loss = |image: &Image| -> f64 {
        let out = encoder.forward(image).unwrap();
        let stack = crate::spectral::SpectralStack::from_coeffs(basis.dct_cols(&out.patches));
        let sel = source_sel.regather(&stack);
        let mut w = Vec::new();
        let cost = cost_matrix(sel.features(), target_sel.features(), &mut w).unwrap();
        let freq = dot(cost.data(), parts.plan.plan().data());
        let global =
            crate::alignment::cosine_distance(&out.global, &target_out.global, &mut w).unwrap();
        config.w_g * global + config.w_l * freq
    };

    let (h, w, c) = source.shape();
    let mut rng = Rng::new(seed);
    let mut report = GradCheckReport {
        relative_samples: 0,
        max_rel_err: 0.0,
        small_samples: 0,
        max_abs_err: 0.0,
    };
    for _ in 0..samples {
        let (y, x, ch) = (rng.below(h), rng.below(w), rng.below(c));
        let mut plus = source.clone();
        let mut minus = source.clone();
        plus.set(y, x, ch, plus.get(y, x, ch) + step);
        minus.set(y, x, ch, minus.get(y, x, ch) - step);
        let fd = (frozen_loss(&plus) - frozen_loss(&minus)) / (2.0 * step);
        let an = analytic.get(y, x, ch);
        if an.abs() < 1e-8 {
            report.small_samples += 1;
            report.max_abs_err = report.max_abs_err.max((fd - an).abs());
        } else {
            report.relative_samples += 1;
            let rel = (fd - an).abs() / an.abs().max(fd.abs());
            report.max_rel_err = report.max_rel_err.max(rel);
        }
    }
    Ok(report)
}

fn check_gradients(seed: u64) -> CheckResult {
    let config = AttackConfig {
        theta: 5,
        n_components: 6,
        ..AttackConfig::default()
    };
    let source = smooth_image(16, 16, 3, seed);
    let target = smooth_image(16, 16, 3, seed + 1);
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    for kind in [EncoderKind::LinearPatch, EncoderKind::Attention1Layer] {
        let spec = EncoderSpec {
            kind,
            patch_size: 4,
            embed_dim: 12,
            seed: 5050,
            input: (16, 16, 3),
        };
        match frozen_loss_gradient_check(&spec, &source, &target, &config, 60, 1e-4, seed + 2) {
            Ok(report) => {
                worst_rel = worst_rel.max(report.max_rel_err);
                worst_abs = worst_abs.max(report.max_abs_err);
            }
            Err(e) => return CheckResult::fail("gradient-check", format!("{e}")),
        }
    }
    if worst_rel < 1e-4 && worst_abs < 1e-7 {
        CheckResult::ok(
            "gradient-check",
            format!("rel {worst_rel:.2e}, abs {worst_abs:.2e}"),
        )
    } else {
        CheckResult::fail(
            "gradient-check",
            format!("rel {worst_rel:.2e}, abs {worst_abs:.2e}"),
        )
    }
}

fn check_attack_budget(seed: u64) -> CheckResult {
    let ensemble = vec![
        EncoderSpec {
            kind: EncoderKind::LinearPatch,
            patch_size: 2,
            embed_dim: 8,
            seed: 11,
            input: (8, 8, 3),
        },
        EncoderSpec {
            kind: EncoderKind::Attention1Layer,
            patch_size: 2,
            embed_dim: 8,
            seed: 12,
            input: (8, 8, 3),
        },
    ];
    let config = AttackConfig {
        iters: 8,
        theta: 3,
        n_components: 4,
        ..AttackConfig::default()
    };
    let source = smooth_image(8, 8, 3, seed);
    let target = smooth_image(8, 8, 3, seed + 1);
    match run_attack(&source, &target, &config, &ensemble) {
        Ok((adv, trace)) => {
            let budget_ok = trace.iter().all(|r| r.delta_linf <= config.epsilon);
            if budget_ok && adv.in_unit_range() {
                CheckResult::ok(
                    "attack-budget-safety",
                    format!("{} iterations clean", trace.len()),
                )
            } else {
                CheckResult::fail(
                    "attack-budget-safety",
                    "budget or range violation".to_string(),
                )
            }
        }
        Err(e) => CheckResult::fail("attack-budget-safety", format!("{e}")),
    }
}

fn check_defenses(seed: u64) -> CheckResult {
    let img = smooth_image(16, 16, 3, seed);
    for spec in [
        DefenseSpec::default_jpeg(),
        DefenseSpec::default_gaussian(),
        DefenseSpec::default_center_crop(),
    ] {
        match defend(&img, &spec) {
            Ok(out) => {
                if out.shape() != img.shape() || !out.in_unit_range() {
                    return CheckResult::fail(
                        "defense-shape-range",
                        format!("{} broke shape or range", spec.kind_name()),
                    );
                }
                if matches!(spec, DefenseSpec::Gaussian { .. }) {
                    for c in 0..3 {
                        let before = spectral_energy_above(&img.channel_plane(c), 0.5).unwrap();
                        let after = spectral_energy_above(&out.channel_plane(c), 0.5).unwrap();
                        if after > before + 1e-10 {
                            return CheckResult::fail(
                                "defense-shape-range",
                                "gaussian raised high-band energy".to_string(),
                            );
                        }
                    }
                }
            }
            Err(e) => return CheckResult::fail("defense-shape-range", format!("{e}")),
        }
    }
    CheckResult::ok("defense-shape-range", "all kinds clean".to_string())
}

/// Run the full battery.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_transforms(seed, 200),
        check_dc_and_shift_claims(seed.wrapping_add(1), 200),
        check_phase_preservation(seed.wrapping_add(2), 40),
        check_band_clip_distorts_direction(),
        check_sinkhorn(seed.wrapping_add(3), 20),
        check_gradients(seed.wrapping_add(4)),
        check_attack_budget(seed.wrapping_add(5)),
        check_defenses(seed.wrapping_add(6)),
    ]
}
