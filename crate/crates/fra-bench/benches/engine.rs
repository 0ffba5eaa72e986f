use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fra_bench::{bench_ensemble, bench_image, random_cost, random_matrix};
use fra_core::alignment::{sinkhorn, SinkhornParams};
use fra_core::attack::{run_attack, AttackConfig};
use fra_core::defenses::{defend, DefenseSpec};
use fra_core::encoders::Encoder;
use fra_core::spectral::{apply_fgr, dct2, dct_tokens, RadialFilter};
use fra_core::tensor::Tensor4;
use std::hint::black_box;

fn transforms(c: &mut Criterion) {
    let tokens_64 = random_matrix(64, 24, 1);
    let tokens_256 = random_matrix(256, 16, 2);
    c.bench_function("dct_tokens_64x24", |b| {
        b.iter(|| dct_tokens(black_box(&tokens_64)).unwrap())
    });
    c.bench_function("dct_tokens_256x16", |b| {
        b.iter(|| dct_tokens(black_box(&tokens_256)).unwrap())
    });
    let plane = random_matrix(32, 32, 3);
    c.bench_function("dct2_32x32", |b| {
        b.iter(|| dct2(black_box(&plane)).unwrap())
    });
    let gradient = Tensor4::from_image(&bench_image(3));
    let filter = RadialFilter::default_polynomial();
    c.bench_function("apply_fgr_3x32x32", |b| {
        b.iter(|| apply_fgr(black_box(&gradient), black_box(&filter)).unwrap())
    });
}

fn transport(c: &mut Criterion) {
    let cost = random_cost(10, 4);
    let params = SinkhornParams::default();
    c.bench_function("sinkhorn_10x10", |b| {
        b.iter(|| sinkhorn(black_box(&cost), black_box(params)).unwrap())
    });
}

fn encoders(c: &mut Criterion) {
    let image = bench_image(5);
    for spec in bench_ensemble() {
        let encoder = Encoder::new(spec.clone()).unwrap();
        let name = format!(
            "forward_{}_p{}_d{}",
            spec.kind.name(),
            spec.patch_size,
            spec.embed_dim
        );
        c.bench_function(&name, |b| {
            b.iter(|| encoder.forward(black_box(&image)).unwrap())
        });
    }
}

fn attack(c: &mut Criterion) {
    let source = bench_image(6);
    let target = bench_image(7);
    let ensemble = bench_ensemble();
    let config = AttackConfig {
        iters: 1,
        ..AttackConfig::default()
    };
    c.bench_function("attack_step", |b| {
        b.iter_batched(
            || (),
            |_| run_attack(black_box(&source), black_box(&target), &config, &ensemble).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn defenses(c: &mut Criterion) {
    let image = bench_image(8);
    for spec in [
        DefenseSpec::default_jpeg(),
        DefenseSpec::default_gaussian(),
        DefenseSpec::default_center_crop(),
    ] {
        let name = format!("defend_{}", spec.kind_name());
        c.bench_function(&name, |b| {
            b.iter(|| defend(black_box(&image), &spec).unwrap())
        });
    }
}

criterion_group!(benches, transforms, transport, encoders, attack, defenses);
criterion_main!(benches);
