use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hymba_core::bench::{variant_config, Variant};
use hymba_core::mae::{encode, MaeModel};
use hymba_core::masking::{MaskPlan, MaskStrategy};
use hymba_core::patch::slice_patches;
use hymba_core::tensor::no_grad;

/// Encoder forward over all tokens, patchification included.
fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_forward");
    group.sample_size(10);
    for dims in [[8, 16, 16], [8, 16, 32], [16, 16, 32], [16, 32, 32]] {
        let tokens = dims.iter().product::<usize>() / 8;
        group.throughput(Throughput::Elements(tokens as u64));
        for variant in Variant::ALL {
            let cfg = variant_config(variant, "tiny", [2, 2, 2]).unwrap();
            let model = MaeModel::new(cfg.clone(), 0).unwrap();
            let params = model.params.bind_const();
            let grid = cfg.grid(dims).unwrap();
            let plan = MaskPlan::from_mask(MaskStrategy::Random, 0.0, 0, &vec![false; tokens]).unwrap();
            let x = hymba_bench::random_var(&[dims[0], dims[1], dims[2], 2], 11).value().clone();
            group.bench_with_input(BenchmarkId::new(variant.name(), tokens), &tokens, |b, _| {
                b.iter(|| {
                    no_grad(|| {
                        let (payloads, _) = slice_patches(&x, &grid).unwrap();
                        black_box(encode(&cfg, &params, &payloads, &grid, &plan).unwrap())
                    })
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
