//! Shared input builders for the engine benchmarks.

use fra_core::encoders::{EncoderKind, EncoderSpec};
use fra_core::rng::Rng;
use fra_core::{Image, Matrix};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

pub fn random_cost(n: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(n, n, |_, _| rng.uniform(0.0, 2.0))
}

pub fn bench_image(seed: u64) -> Image {
    fra_core::synth::banded_image(32, 32, 3, seed)
}

pub fn bench_ensemble() -> Vec<EncoderSpec> {
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
