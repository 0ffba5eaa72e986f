//! Finite-difference validation of the analytic input gradients through the
//! full composite loss (frozen-plan surrogate), for both encoder kinds.

use fra_core::attack::AttackConfig;
use fra_core::encoders::{EncoderKind, EncoderSpec};
use fra_core::selfcheck::frozen_loss_gradient_check;
use fra_core::synth::{noise_image, smooth_image};

#[test]
fn composite_loss_gradients_match_finite_differences() {
    let config = AttackConfig::default();
    for (pair_idx, kind) in [EncoderKind::LinearPatch, EncoderKind::Attention1Layer]
        .into_iter()
        .enumerate()
    {
        let spec = EncoderSpec {
            kind,
            patch_size: 4,
            embed_dim: 16,
            seed: 900 + pair_idx as u64,
            input: (32, 32, 3),
        };
        let source = smooth_image(32, 32, 3, 7_000 + pair_idx as u64);
        let target = smooth_image(32, 32, 3, 8_000 + pair_idx as u64);
        let report =
            frozen_loss_gradient_check(&spec, &source, &target, &config, 100, 1e-4, 42).unwrap();
        assert!(
            report.passes(1e-4, 1e-7),
            "{}: rel {:.3e} over {} samples, abs {:.3e} over {} small samples",
            kind.name(),
            report.max_rel_err,
            report.relative_samples,
            report.max_abs_err,
            report.small_samples,
        );
    }
}

#[test]
fn gradients_hold_on_noise_inputs_too() {
    let config = AttackConfig {
        theta: 5,
        n_components: 8,
        ..AttackConfig::default()
    };
    let spec = EncoderSpec {
        kind: EncoderKind::Attention1Layer,
        patch_size: 4,
        embed_dim: 12,
        seed: 31,
        input: (16, 16, 3),
    };
    let source = noise_image(16, 16, 3, 1);
    let target = noise_image(16, 16, 3, 2);
    let report = frozen_loss_gradient_check(&spec, &source, &target, &config, 80, 1e-4, 3).unwrap();
    assert!(report.passes(1e-4, 1e-7), "rel {:.3e}", report.max_rel_err);
}
