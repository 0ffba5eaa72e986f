//! Desk-scale transfer metrics: held-out-encoder similarity reports and
//! per-patch high-frequency energy maps.
//!
//! Success is judged relatively: the adversarial image transfers on a pair
//! when the held-out encoder finds it more similar to the target than to the
//! source. Toy-encoder cosine scales are not calibrated against any absolute
//! threshold, so the relative criterion is the scale-free monotone proxy.

use crate::alignment::{cosine_distance, select_high_freq};
use crate::encoders::{Encoder, EncoderSpec};
use crate::error::{FraError, Result};
use crate::spectral::{dct_tokens, idct_tokens, SpectralStack};
use crate::tensor::{norm, Image, Matrix};

/// Held-out similarity record for one (source, target, adversarial) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub sim_adv_target: f64,
    pub sim_adv_source: f64,
    pub success: bool,
}

/// Aggregated transfer report over a batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub per_pair: Vec<PairEval>,
    pub mean_sim: f64,
    pub success_rate: f64,
}

impl TransferReport {
    pub fn from_pairs(per_pair: Vec<PairEval>) -> TransferReport {
        let n = per_pair.len().max(1) as f64;
        let mean_sim = per_pair.iter().map(|p| p.sim_adv_target).sum::<f64>() / n;
        let success_rate = per_pair.iter().filter(|p| p.success).count() as f64 / n;
        TransferReport {
            per_pair,
            mean_sim,
            success_rate,
        }
    }
}

/// Cosine similarity of global features under the held-out encoder, for the
/// adversarial image against both the target and the source. The holdout
/// seed must be disjoint from every surrogate seed.
pub fn holdout_similarity(
    adversarial: &Image,
    source: &Image,
    target: &Image,
    holdout: &EncoderSpec,
    ensemble: &[EncoderSpec],
) -> Result<PairEval> {
    if ensemble.iter().any(|s| s.seed == holdout.seed) {
        return Err(FraError::InvalidParam {
            name: "holdout",
            reason: format!(
                "holdout seed {} collides with a surrogate seed",
                holdout.seed
            ),
        });
    }
    let encoder = Encoder::new(holdout.clone())?;
    let g_adv = encoder.forward(adversarial)?.global;
    let g_src = encoder.forward(source)?.global;
    let g_tgt = encoder.forward(target)?.global;
    let mut warnings = Vec::new();
    let sim_adv_target = 1.0 - cosine_distance(&g_adv, &g_tgt, &mut warnings)?;
    let sim_adv_source = 1.0 - cosine_distance(&g_adv, &g_src, &mut warnings)?;
    Ok(PairEval {
        sim_adv_target,
        sim_adv_source,
        success: sim_adv_target > sim_adv_source,
    })
}

/// Per-patch energy of the selected high-frequency token components,
/// reconstructed through a single inverse DCT and normalized to [0, 1] by
/// the maximum. A map whose maximum sits at the float-noise floor (<= 1e-20)
/// counts as all-zero and is returned as-is, so patch-uniform images map to
/// zero instead of amplified rounding noise. The result is laid out on the
/// encoder's patch grid.
pub fn energy_map(image: &Image, spec: &EncoderSpec, theta: usize, n: usize) -> Result<Matrix> {
    let encoder = Encoder::new(spec.clone())?;
    let out = encoder.forward(image)?;
    let stack = dct_tokens(&out.patches)?;
    let selection = select_high_freq(&stack, theta, n)?;
    // Keep only the selected rows of the spectrum.
    let mut kept = Matrix::zeros(stack.token_count(), stack.dim());
    for &k in selection.indices() {
        kept.row_mut(k).copy_from_slice(stack.coeffs().row(k));
    }
    let tokens = idct_tokens(&SpectralStack::from_coeffs(kept));
    let (grid_h, grid_w) = spec.patch_grid();
    let mut map = Matrix::from_fn(grid_h, grid_w, |gy, gx| {
        let q = gy * grid_w + gx;
        let e = norm(tokens.row(q));
        e * e
    });
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    if max > 1e-20 {
        for v in map.data_mut() {
            *v /= max;
        }
    }
    Ok(map)
}
