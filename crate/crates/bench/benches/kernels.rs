use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use vrmsi_bench::{random_complex, random_volume};
use vrmsi_core::learn::{ModelConfig, UNet};
use vrmsi_core::recon::{pi_interpolate, KernelGeometry, PiSettings};
use vrmsi_core::sampling::uniform_accel_mask;
use vrmsi_core::tensor::fft2_centered;
use vrmsi_core::Domain;

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft2_centered");
    for n in [32, 64, 128, 256] {
        let img = random_complex(n, n, Domain::Image, n as u64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &img, |b, img| b.iter(|| fft2_centered(black_box(img)).unwrap()));
    }
    g.finish();
}

fn grappa(c: &mut Criterion) {
    let (ky, kz, acs) = (64, 64, [16, 32]);
    let coils: Vec<_> = (0..4).map(|i| random_complex(ky, kz, Domain::Kspace, 100 + i)).collect();
    let mask = uniform_accel_mask(ky, kz, 2, 2, acs).unwrap();
    let settings = PiSettings { accel: [2, 2], acs, kernel: KernelGeometry::default(), lambda: 1e-4 };
    c.bench_function("pi_interpolate 4 coils 64x64 R2x2", |b| {
        b.iter(|| pi_interpolate(black_box(&coils), &mask, &settings).unwrap())
    });
}

fn unet(c: &mut Criterion) {
    let net = UNet::new(ModelConfig::new(8, vec![8, 16, 16, 32, 32])).unwrap();
    let params = net.init_params(1);
    let x = random_volume(8, 64, 64, 2);
    c.bench_function("unet forward 8 bins 64x64", |b| b.iter(|| net.forward(&params, black_box(&x)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = fft, grappa, unet
}
criterion_main!(benches);
