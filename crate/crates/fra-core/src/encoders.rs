//! Differentiable toy encoders standing in for pretrained ViT surrogates.
//!
//! Both kinds share a seeded linear patch embedding; the attention kind adds
//! one single-head softmax self-attention layer with a residual connection.
//! The global feature is a seeded projection of the mean token. Forward and
//! backward are hand-written, so the input gradient is exact (through the
//! softmax included) and bitwise reproducible for a fixed spec.
//!
//! Weight initialization: every entry is drawn uniformly from (-s, s) with
//! `s = 1 / sqrt(fan_in)` from the xorshift64* stream seeded by
//! [`EncoderSpec::seed`] (see [`crate::rng`]). Draw order is fixed and
//! documented on [`Encoder::new`]; identical descriptions therefore produce
//! bitwise-identical weights on any platform.

use crate::error::{FraError, Result};
use crate::rng::Rng;
use crate::tensor::{ensure_finite, Image, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    LinearPatch,
    Attention1Layer,
}

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::LinearPatch => "linear-patch",
            EncoderKind::Attention1Layer => "attention-1layer",
        }
    }

    pub fn parse(s: &str) -> Option<EncoderKind> {
        match s {
            "linear-patch" => Some(EncoderKind::LinearPatch),
            "attention-1layer" => Some(EncoderKind::Attention1Layer),
            _ => None,
        }
    }
}

/// Declarative description of a toy encoder; the weights are a pure function
/// of this value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
    /// Expected input shape (height, width, channels).
    pub input: (usize, usize, usize),
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input;
        if h == 0 || w == 0 || c == 0 || self.embed_dim == 0 || self.patch_size == 0 {
            return Err(FraError::InvalidParam {
                name: "encoder",
                reason: "all encoder dimensions must be nonzero".to_string(),
            });
        }
        if h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(FraError::InvalidParam {
                name: "patch_size",
                reason: format!(
                    "input {h}x{w} is not divisible by patch size {}",
                    self.patch_size
                ),
            });
        }
        Ok(())
    }

    /// (rows, cols) of the patch grid.
    pub fn patch_grid(&self) -> (usize, usize) {
        (
            self.input.0 / self.patch_size,
            self.input.1 / self.patch_size,
        )
    }

    /// Number of tokens P.
    pub fn token_count(&self) -> usize {
        let (gh, gw) = self.patch_grid();
        gh * gw
    }
}

/// Saved activations sufficient for the backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Linear,
    Attention {
        tokens: Matrix,    // E, pre-attention patch embeddings
        queries: Matrix,   // Q
        keys: Matrix,      // K
        values: Matrix,    // V
        attention: Matrix, // A, row-softmax of QK^T / sqrt(d)
    },
}

/// Output of one encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub global: Vec<f64>,
    pub patches: Matrix,
    pub cache: ForwardCache,
}

/// Weights realized from an [`EncoderSpec`]. All matrices are stored as
/// (out x in); token-level projections apply them per row.
#[derive(Debug, Clone)]
pub struct Encoder {
    spec: EncoderSpec,
    w_patch: Matrix,
    b_patch: Vec<f64>,
    attn: Option<AttentionWeights>,
    w_global: Matrix,
    b_global: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AttentionWeights {
    w_q: Matrix,
    b_q: Vec<f64>,
    w_k: Matrix,
    b_k: Vec<f64>,
    w_v: Matrix,
    b_v: Vec<f64>,
    w_o: Matrix,
    b_o: Vec<f64>,
}

fn draw_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let s = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-s, s))
}

fn draw_bias(rng: &mut Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let s = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.uniform(-s, s)).collect()
}

impl Encoder {
    /// Build the seeded weights. Draw order: patch projection (row-major),
    /// patch bias, then for the attention kind Q/K/V/output projections each
    /// followed by its bias, then the global projection and its bias.
    pub fn new(spec: EncoderSpec) -> Result<Encoder> {
        spec.validate()?;
        let (_, _, c) = spec.input;
        let d = spec.embed_dim;
        let patch_len = spec.patch_size * spec.patch_size * c;
        let mut rng = Rng::new(spec.seed);
        let w_patch = draw_matrix(&mut rng, d, patch_len);
        let b_patch = draw_bias(&mut rng, d, patch_len);
        let attn = match spec.kind {
            EncoderKind::LinearPatch => None,
            EncoderKind::Attention1Layer => Some(AttentionWeights {
                w_q: draw_matrix(&mut rng, d, d),
                b_q: draw_bias(&mut rng, d, d),
                w_k: draw_matrix(&mut rng, d, d),
                b_k: draw_bias(&mut rng, d, d),
                w_v: draw_matrix(&mut rng, d, d),
                b_v: draw_bias(&mut rng, d, d),
                w_o: draw_matrix(&mut rng, d, d),
                b_o: draw_bias(&mut rng, d, d),
            }),
        };
        let w_global = draw_matrix(&mut rng, d, d);
        let b_global = draw_bias(&mut rng, d, d);
        Ok(Encoder {
            spec,
            w_patch,
            b_patch,
            attn,
            w_global,
            b_global,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Zero every bias vector; used by linearity checks and ablations.
    pub fn with_zero_biases(mut self) -> Encoder {
        self.b_patch.fill(0.0);
        self.b_global.fill(0.0);
        if let Some(attn) = &mut self.attn {
            attn.b_q.fill(0.0);
            attn.b_k.fill(0.0);
            attn.b_v.fill(0.0);
            attn.b_o.fill(0.0);
        }
        self
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.shape() != self.spec.input {
            return Err(FraError::ShapeMismatch {
                what: "encoder input",
                expected: format!("{:?}", self.spec.input),
                actual: format!("{:?}", image.shape()),
            });
        }
        ensure_finite(image.data(), "encoder input")?;
        Ok(())
    }

    /// Flatten patch `q` (row-major over the patch grid) in (y, x, channel)
    /// order.
    fn patch_vector(&self, image: &Image, q: usize) -> Vec<f64> {
        let (_, gw) = self.spec.patch_grid();
        let p = self.spec.patch_size;
        let c = self.spec.input.2;
        let (gy, gx) = (q / gw, q % gw);
        let mut out = Vec::with_capacity(p * p * c);
        for py in 0..p {
            for px in 0..p {
                for ch in 0..c {
                    out.push(image.get(gy * p + py, gx * p + px, ch));
                }
            }
        }
        out
    }

    fn embed_patches(&self, image: &Image) -> Matrix {
        let p_count = self.spec.token_count();
        let d = self.spec.embed_dim;
        let mut tokens = Matrix::zeros(p_count, d);
        for q in 0..p_count {
            let x = self.patch_vector(image, q);
            let mut e = self.w_patch.mul_vec(&x);
            for (ev, bv) in e.iter_mut().zip(&self.b_patch) {
                *ev += bv;
            }
            tokens.row_mut(q).copy_from_slice(&e);
        }
        tokens
    }

    /// Apply an (out x in) projection to every row plus bias.
    fn project_rows(m: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
        let mut out = m.mul_bt(w);
        for r in 0..out.rows() {
            for (v, bias) in out.row_mut(r).iter_mut().zip(b) {
                *v += bias;
            }
        }
        out
    }

    pub fn forward(&self, image: &Image) -> Result<EncoderOutput> {
        self.check_image(image)?;
        let tokens = self.embed_patches(image);
        let (patches, cache) = match &self.attn {
            None => (tokens, ForwardCache::Linear),
            Some(attn) => {
                let d = self.spec.embed_dim as f64;
                let queries = Self::project_rows(&tokens, &attn.w_q, &attn.b_q);
                let keys = Self::project_rows(&tokens, &attn.w_k, &attn.b_k);
                let values = Self::project_rows(&tokens, &attn.w_v, &attn.b_v);
                let mut scores = queries.mul_bt(&keys);
                let scale = 1.0 / d.sqrt();
                for v in scores.data_mut() {
                    *v *= scale;
                }
                let attention = row_softmax(&scores);
                let context = attention.mul(&values);
                let projected = Self::project_rows(&context, &attn.w_o, &attn.b_o);
                let out = tokens.add_scaled(&projected, 1.0);
                (
                    out,
                    ForwardCache::Attention {
                        tokens,
                        queries,
                        keys,
                        values,
                        attention,
                    },
                )
            }
        };
        let mean = mean_row(&patches);
        let mut global = self.w_global.mul_vec(&mean);
        for (g, b) in global.iter_mut().zip(&self.b_global) {
            *g += b;
        }
        Ok(EncoderOutput {
            global,
            patches,
            cache,
        })
    }

    /// Reverse-mode gradient of a scalar loss with respect to the input
    /// image, given the loss adjoints on the forward outputs of the SAME
    /// image.
    pub fn input_gradient(
        &self,
        output: &EncoderOutput,
        d_global: &[f64],
        d_patches: &Matrix,
    ) -> Result<Image> {
        let p_count = self.spec.token_count();
        let d = self.spec.embed_dim;
        if d_global.len() != d {
            return Err(FraError::ShapeMismatch {
                what: "global adjoint",
                expected: format!("{d}"),
                actual: format!("{}", d_global.len()),
            });
        }
        if d_patches.rows() != p_count || d_patches.cols() != d {
            return Err(FraError::ShapeMismatch {
                what: "patch adjoint",
                expected: format!("{p_count}x{d}"),
                actual: format!("{}x{}", d_patches.rows(), d_patches.cols()),
            });
        }

        // global = W_g * mean(patches) + b_g
        let d_mean = self.w_global.tr_mul_vec(d_global);
        let mut d_out = d_patches.clone();
        let inv_p = 1.0 / p_count as f64;
        for r in 0..p_count {
            for (v, m) in d_out.row_mut(r).iter_mut().zip(&d_mean) {
                *v += m * inv_p;
            }
        }

        let d_tokens = match (&self.attn, &output.cache) {
            (None, ForwardCache::Linear) => d_out,
            (
                Some(attn),
                ForwardCache::Attention {
                    queries,
                    keys,
                    values,
                    attention,
                    ..
                },
            ) => {
                let scale = 1.0 / (d as f64).sqrt();
                // out = tokens + (A V) W_o^T + b_o
                let d_context = d_out.mul(&attn.w_o);
                let d_attention = d_context.mul_bt(values);
                let d_values = attention.tr_mul(&d_context);
                // Softmax backward per row.
                let mut d_scores = Matrix::zeros(p_count, p_count);
                for i in 0..p_count {
                    let a_row = attention.row(i);
                    let da_row = d_attention.row(i);
                    let inner: f64 = a_row.iter().zip(da_row).map(|(a, g)| a * g).sum();
                    for j in 0..p_count {
                        d_scores.set(i, j, a_row[j] * (da_row[j] - inner));
                    }
                }
                for v in d_scores.data_mut() {
                    *v *= scale;
                }
                let d_queries = d_scores.mul(keys);
                let d_keys = d_scores.tr_mul(queries);
                // Residual path plus the three projection paths into E.
                d_out
                    .add_scaled(&d_queries.mul(&attn.w_q), 1.0)
                    .add_scaled(&d_keys.mul(&attn.w_k), 1.0)
                    .add_scaled(&d_values.mul(&attn.w_v), 1.0)
            }
            _ => {
                return Err(FraError::InvalidParam {
                    name: "cache",
                    reason: "forward cache does not match encoder kind".to_string(),
                })
            }
        };

        // Patch embedding backward: scatter W_p^T * dE_q into pixel space.
        let (h, w, c) = self.spec.input;
        let (_, gw) = self.spec.patch_grid();
        let p = self.spec.patch_size;
        let mut grad = Image::zeros(h, w, c);
        for q in 0..p_count {
            let dx = self.w_patch.tr_mul_vec(d_tokens.row(q));
            let (gy, gx) = (q / gw, q % gw);
            let mut idx = 0;
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        grad.set(gy * p + py, gx * p + px, ch, dx[idx]);
                        idx += 1;
                    }
                }
            }
        }
        Ok(grad)
    }
}

fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn mean_row(m: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (mv, v) in mean.iter_mut().zip(m.row(r)) {
            *mv += v;
        }
    }
    let inv = 1.0 / m.rows() as f64;
    for mv in &mut mean {
        *mv *= inv;
    }
    mean
}

/// Forward pass through the encoder described by `spec`.
pub fn forward(spec: &EncoderSpec, image: &Image) -> Result<EncoderOutput> {
    Encoder::new(spec.clone())?.forward(image)
}

/// Input gradient of a loss with the given output adjoints; recomputes the
/// forward pass for its cache.
pub fn input_gradient(
    spec: &EncoderSpec,
    image: &Image,
    d_global: &[f64],
    d_patches: &Matrix,
) -> Result<Image> {
    let encoder = Encoder::new(spec.clone())?;
    let output = encoder.forward(image)?;
    encoder.input_gradient(&output, d_global, d_patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn spec(kind: EncoderKind, seed: u64) -> EncoderSpec {
        EncoderSpec {
            kind,
            patch_size: 4,
            embed_dim: 8,
            seed,
            input: (8, 8, 3),
        }
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        let mut img = Image::zeros(h, w, c);
        for v in img.data_mut() {
            *v = rng.next_f64();
        }
        img
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(EncoderKind::LinearPatch, 1);
        s.patch_size = 3;
        assert!(s.validate().is_err());
        s.patch_size = 4;
        assert!(s.validate().is_ok());
        assert_eq!(s.token_count(), 4);
    }

    #[test]
    fn identical_specs_identical_weights_and_outputs() {
        let img = random_image(8, 8, 3, 7);
        let a = forward(&spec(EncoderKind::Attention1Layer, 99), &img).unwrap();
        let b = forward(&spec(EncoderKind::Attention1Layer, 99), &img).unwrap();
        assert_eq!(a.global, b.global);
        assert_eq!(a.patches, b.patches);
        let c = forward(&spec(EncoderKind::Attention1Layer, 100), &img).unwrap();
        assert_ne!(a.global, c.global);
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_outputs() {
        let encoder = Encoder::new(spec(EncoderKind::LinearPatch, 5))
            .unwrap()
            .with_zero_biases();
        let out = encoder.forward(&Image::zeros(8, 8, 3)).unwrap();
        assert!(out.global.iter().all(|&v| v == 0.0));
        assert!(out.patches.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_patching_is_local() {
        let base = random_image(8, 8, 3, 11);
        let mut touched = base.clone();
        // Perturb a pixel inside patch (1, 1) = token 3 of the 2x2 grid.
        touched.set(5, 6, 1, touched.get(5, 6, 1) + 0.25);
        let e = Encoder::new(spec(EncoderKind::LinearPatch, 5)).unwrap();
        let a = e.forward(&base).unwrap();
        let b = e.forward(&touched).unwrap();
        for q in 0..4 {
            let differs = a.patches.row(q) != b.patches.row(q);
            assert_eq!(differs, q == 3, "token {q}");
        }
    }

    #[test]
    fn linearity_with_zero_biases() {
        let e = Encoder::new(spec(EncoderKind::LinearPatch, 21))
            .unwrap()
            .with_zero_biases();
        let x = random_image(8, 8, 3, 1);
        let y = random_image(8, 8, 3, 2);
        let (alpha, beta) = (0.3, -1.7);
        let mix = {
            let mut m = Image::zeros(8, 8, 3);
            for ((mv, xv), yv) in m.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                *mv = alpha * xv + beta * yv;
            }
            m
        };
        let fx = e.forward(&x).unwrap();
        let fy = e.forward(&y).unwrap();
        let fmix = e.forward(&mix).unwrap();
        for i in 0..fx.global.len() {
            let expect = alpha * fx.global[i] + beta * fy.global[i];
            assert!((fmix.global[i] - expect).abs() < 1e-10);
        }
        let combined = fx.patches.scale(alpha).add_scaled(&fy.patches, beta);
        assert!(fmix.patches.max_abs_diff(&combined) < 1e-10);
    }

    #[test]
    fn patch_count_quadruples_when_sides_double() {
        let small = spec(EncoderKind::LinearPatch, 1);
        let mut big = small.clone();
        big.input = (16, 16, 3);
        assert_eq!(big.token_count(), 4 * small.token_count());
    }

    /// Straightforward scalar re-implementation of the attention forward
    /// pass, independent of the Matrix helpers.
    #[allow(clippy::needless_range_loop)]
    fn attention_forward_oracle(enc: &Encoder, image: &Image) -> (Vec<f64>, Vec<Vec<f64>>) {
        let s = enc.spec.clone();
        let (gh, gw) = s.patch_grid();
        let d = s.embed_dim;
        let p = s.patch_size;
        let c = s.input.2;
        let attn = enc.attn.as_ref().unwrap();
        let p_count = gh * gw;

        let mut tokens = vec![vec![0.0; d]; p_count];
        for gy in 0..gh {
            for gx in 0..gw {
                let q = gy * gw + gx;
                let mut flat = Vec::new();
                for py in 0..p {
                    for px in 0..p {
                        for ch in 0..c {
                            flat.push(image.get(gy * p + py, gx * p + px, ch));
                        }
                    }
                }
                for i in 0..d {
                    let mut acc = enc.b_patch[i];
                    for (j, &x) in flat.iter().enumerate() {
                        acc += enc.w_patch.get(i, j) * x;
                    }
                    tokens[q][i] = acc;
                }
            }
        }

        let proj = |w: &Matrix, b: &[f64], t: &[Vec<f64>]| -> Vec<Vec<f64>> {
            t.iter()
                .map(|row| {
                    (0..d)
                        .map(|i| b[i] + (0..d).map(|j| w.get(i, j) * row[j]).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let q = proj(&attn.w_q, &attn.b_q, &tokens);
        let k = proj(&attn.w_k, &attn.b_k, &tokens);
        let v = proj(&attn.w_v, &attn.b_v, &tokens);

        let scale = 1.0 / (d as f64).sqrt();
        let mut out_tokens = vec![vec![0.0; d]; p_count];
        for a in 0..p_count {
            let scores: Vec<f64> = (0..p_count)
                .map(|b| (0..d).map(|i| q[a][i] * k[b][i]).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut ctx = vec![0.0; d];
            for b in 0..p_count {
                let weight = exps[b] / total;
                for i in 0..d {
                    ctx[i] += weight * v[b][i];
                }
            }
            for i in 0..d {
                let mut o = attn.b_o[i];
                for j in 0..d {
                    o += attn.w_o.get(i, j) * ctx[j];
                }
                out_tokens[a][i] = tokens[a][i] + o;
            }
        }

        let mut mean = vec![0.0; d];
        for row in &out_tokens {
            for i in 0..d {
                mean[i] += row[i] / p_count as f64;
            }
        }
        let global: Vec<f64> = (0..d)
            .map(|i| {
                enc.b_global[i]
                    + (0..d)
                        .map(|j| enc.w_global.get(i, j) * mean[j])
                        .sum::<f64>()
            })
            .collect();
        (global, out_tokens)
    }

    #[test]
    fn attention_forward_matches_duplicate_implementation() {
        let s = EncoderSpec {
            kind: EncoderKind::Attention1Layer,
            patch_size: 8,
            embed_dim: 12,
            seed: 4242,
            input: (32, 32, 3),
        };
        let encoder = Encoder::new(s).unwrap();
        let img = random_image(32, 32, 3, 9001);
        let out = encoder.forward(&img).unwrap();
        let (global, tokens) = attention_forward_oracle(&encoder, &img);
        for (ours, oracle) in out.global.iter().zip(&global) {
            assert!((ours - oracle).abs() < 1e-10);
        }
        for (q, row) in tokens.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                assert!((out.patches.get(q, i) - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_adjoints_give_zero_gradient() {
        for kind in [EncoderKind::LinearPatch, EncoderKind::Attention1Layer] {
            let s = spec(kind, 3);
            let img = random_image(8, 8, 3, 4);
            let grad =
                input_gradient(&s, &img, &[0.0; 8], &Matrix::zeros(s.token_count(), 8)).unwrap();
            assert!(grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_hot_patch_adjoint_is_local_for_linear_kind() {
        let s = spec(EncoderKind::LinearPatch, 3);
        let img = random_image(8, 8, 3, 4);
        let mut d_patches = Matrix::zeros(4, 8);
        d_patches.set(2, 5, 1.0); // token 2 = grid cell (1, 0)
        let grad = input_gradient(&s, &img, &[0.0; 8], &d_patches).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let inside = y >= 4 && x < 4;
                let nonzero = (0..3).any(|c| grad.get(y, x, c) != 0.0);
                assert_eq!(nonzero, inside, "pixel ({y}, {x})");
            }
        }
    }

    #[test]
    fn adjoint_shape_mismatch_rejected() {
        let s = spec(EncoderKind::LinearPatch, 3);
        let img = random_image(8, 8, 3, 4);
        assert!(input_gradient(&s, &img, &[0.0; 7], &Matrix::zeros(4, 8)).is_err());
        assert!(input_gradient(&s, &img, &[0.0; 8], &Matrix::zeros(5, 8)).is_err());
    }

    /// Central finite differences of an arbitrary scalar loss of the encoder
    /// outputs, checked against the analytic input gradient.
    #[test]
    fn input_gradient_matches_finite_differences() {
        for kind in [EncoderKind::LinearPatch, EncoderKind::Attention1Layer] {
            let s = spec(kind, 31);
            let encoder = Encoder::new(s.clone()).unwrap();
            let img = random_image(8, 8, 3, 32);
            // Loss: fixed random linear functional of (global, patches).
            let mut rng = Rng::new(777);
            let a: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let b = Matrix::from_fn(s.token_count(), 8, |_, _| rng.uniform(-1.0, 1.0));
            let loss = |image: &Image| -> f64 {
                let out = encoder.forward(image).unwrap();
                let mut l = 0.0;
                for (weight, g) in a.iter().zip(&out.global) {
                    l += weight * g;
                }
                for q in 0..s.token_count() {
                    for i in 0..8 {
                        l += b.get(q, i) * out.patches.get(q, i);
                    }
                }
                l
            };
            let out = encoder.forward(&img).unwrap();
            let grad = encoder.input_gradient(&out, &a, &b).unwrap();
            let h = 1e-5;
            let mut coord_rng = Rng::new(55);
            for _ in 0..40 {
                let y = coord_rng.below(8);
                let x = coord_rng.below(8);
                let c = coord_rng.below(3);
                let mut plus = img.clone();
                let mut minus = img.clone();
                plus.set(y, x, c, plus.get(y, x, c) + h);
                minus.set(y, x, c, minus.get(y, x, c) - h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grad.get(y, x, c);
                let denom = an.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < 1e-5,
                    "{}: ({y},{x},{c}) fd={fd} analytic={an}",
                    s.kind.name()
                );
            }
        }
    }
}
