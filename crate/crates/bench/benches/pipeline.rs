use criterion::{black_box, criterion_group, criterion_main, Criterion};
use holo_bench::{corridor, grid};
use holo_core::detect::{loop_rows, sample_fcd, FcdConfig, LoopDetectorConfig};
use holo_core::reconstruct::{reconstruct_streams, Trajectory};
use holo_core::tripbuild::{build_trips, TripConfig};
use holo_core::{NodeId, SegmentKey, Turn};

fn netmodel(c: &mut Criterion) {
    let net = grid(6, 3);
    let (a, b) = (NodeId::from("G0-0"), NodeId::from("G5-5"));
    c.bench_function("enumerate_paths grid 6x6", |bench| {
        bench.iter(|| net.enumerate_paths_any(black_box(&a), black_box(&b), 10).unwrap())
    });
    c.bench_function("verify_full_sensing grid 6x6", |bench| {
        bench.iter(|| net.verify_full_sensing(8).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let fx = corridor(400, 40, 1);
    c.bench_function("build_trips 400 vehicles", |bench| {
        bench.iter(|| {
            build_trips(
                black_box(&fx.records),
                &fx.truth.network,
                &fx.truth.plans,
                &TripConfig::default(),
                &Default::default(),
            )
            .unwrap()
        })
    });
    c.bench_function("reconstruct_streams 400 vehicles", |bench| {
        bench.iter(|| reconstruct_streams(black_box(&fx.streams), &fx.truth.plans, &fx.config.params, 7).unwrap())
    });

    let trajectories: Vec<Trajectory> = fx.truth.passages.iter().map(|p| p.trajectory.clone()).collect();
    let segment = SegmentKey::new("N1", "N2");
    let cfg = LoopDetectorConfig::new("L", segment, 20.0, 300);
    let (from, to) = (fx.config.start, fx.config.start + fx.config.horizon);
    c.bench_function("loop_rows 400 vehicles", |bench| {
        bench.iter(|| loop_rows(black_box(&trajectories), &cfg, 300.0, Turn::Unknown, from, to).unwrap())
    });
    let fcd = FcdConfig {
        hash_salt: "bench".into(),
        ..FcdConfig::default()
    };
    c.bench_function("sample_fcd 400 vehicles", |bench| {
        bench.iter(|| sample_fcd(black_box(&trajectories), &fcd, &fx.truth.network).unwrap())
    });
}

criterion_group!(benches, netmodel, pipeline);
criterion_main!(benches);
