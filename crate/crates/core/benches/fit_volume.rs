use criterion::{criterion_group, criterion_main, Criterion};
use ivimlab::ivim::{fit_volume_with, Execution, IvimFitConfig};
use ivimlab::mask_ops::hausdorff;
use ivimlab::phantom::{dilate, make_phantom, NoiseModel, PhantomConfig};
use std::hint::black_box;

fn fit(c: &mut Criterion) {
    let bundle = make_phantom(&PhantomConfig {
        noise: NoiseModel::Rician { snr: 40.0 },
        seed: 1,
        ..PhantomConfig::default()
    })
    .unwrap();
    let cfg = IvimFitConfig::default();
    let mut group = c.benchmark_group("fit_volume");
    group.sample_size(20);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |b| {
            b.iter(|| fit_volume_with(black_box(&bundle.series), &bundle.mask, &cfg, exec).unwrap())
        });
    }
    group.finish();

    let grown = dilate(&bundle.mask, 2);
    c.bench_function("hausdorff_default_phantom", |b| {
        b.iter(|| hausdorff(black_box(&bundle.mask), &grown).unwrap())
    });
}

criterion_group!(benches, fit);
criterion_main!(benches);
