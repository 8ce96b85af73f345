use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gc_bench::{activation, rng, spatial_conv};
use gc_core::backbone::{build_network, BlockStyle, NetworkSpec};
use gc_core::calib::{GcConfig, GcModule, Placement};
use gc_core::ops::{conv3d, Mode};
use gc_core::toybench::Variant;
use num_rational::Ratio;

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d_1x3x3");
    for ch in [16, 64] {
        let x = activation(2, 8, 16, ch, 0);
        let p = spatial_conv(ch, 1);
        g.throughput(Throughput::Elements((x.numel() * 9 * ch) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(ch), &ch, |b, _| b.iter(|| conv3d(black_box(&x), &p).unwrap()));
    }
    g.finish();
}

fn gc_site(c: &mut Criterion) {
    let mut g = c.benchmark_group("gc_forward");
    for (label, p) in [("p=1/2", Ratio::new(1, 2)), ("p=1", Ratio::from_integer(1))] {
        let cfg = GcConfig::new(p, Placement::Loop).unwrap();
        let mut site = GcModule::<f32>::new(&cfg, 64, 1).unwrap();
        site.init(&mut rng(2));
        let x = activation(2, 8, 14, 64, 3);
        g.bench_function(label, |b| b.iter(|| site.forward(black_box(&x), Mode::Eval).unwrap()));
    }
    g.finish();
}

fn micro_net(c: &mut Criterion) {
    let mut g = c.benchmark_group("micro_net_forward");
    g.sample_size(10);
    for v in [Variant::NoGc, Variant::Gc] {
        let mut m = build_network::<f32>(&v.spec(), 0).unwrap();
        let x = activation(8, 8, 32, 1, 4);
        g.bench_function(v.to_string(), |b| b.iter(|| m.forward(black_box(&x), Mode::Eval).unwrap()));
    }
    let tsm = NetworkSpec::micro(BlockStyle::Tsm);
    let mut m = build_network::<f32>(&tsm, 0).unwrap();
    let x = activation(8, 8, 32, 1, 5);
    g.bench_function("tsm", |b| b.iter(|| m.forward(black_box(&x), Mode::Eval).unwrap()));
    g.finish();
}

criterion_group!(benches, conv, gc_site, micro_net);
criterion_main!(benches);
