use criterion::{criterion_group, criterion_main, Criterion};
use segres_bench::{fixture, spec};
use segres_core::corrupt::{BlurSpec, SceneKind};
use segres_core::driver::run;

fn full_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_128");
    group.sample_size(10);
    let cases = [
        ("shapes2_noise0.2", fixture(SceneKind::Shapes2, 128, spec(0.2, BlurSpec::None, 0.0), 1.0, 5.0)),
        ("barcode_drop40", fixture(SceneKind::Barcode, 128, spec(0.2, BlurSpec::None, 0.4), 5.0, 10.0)),
        (
            "shapes4_motion15",
            fixture(SceneKind::Shapes4, 128, spec(1e-4, BlurSpec::Motion { length: 15, angle_deg: 90.0 }, 0.0), 1000.0, 10.0),
        ),
    ];
    for (name, fx) in &cases {
        group.bench_function(*name, |b| b.iter(|| run(&fx.f, &fx.omega, &fx.params).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, full_runs);
criterion_main!(benches);
