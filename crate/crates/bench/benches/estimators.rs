use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use prgf_bench::Fixture;
use prgf_core::estimator::{estimate, lambda_star, EstimatorConfig, Method};
use prgf_core::math::{sample_biased, RngStream, SamplerSpec};
use prgf_core::oracle::LocalOracle;
use prgf_core::prior::PriorStats;

const DIM: usize = 512;
const SUBSPACE: usize = 32;

fn sampling(c: &mut Criterion) {
    let f = Fixture::new(DIM, SUBSPACE);
    let mut group = c.benchmark_group("sample_biased");
    let specs = [
        ("uniform", SamplerSpec::uniform(DIM)),
        (
            "biased",
            SamplerSpec {
                dim: DIM,
                bias_direction: Some(f.prior.v()),
                bias_coefficient: 0.3,
                subspace: None,
            },
        ),
        (
            "subspace",
            SamplerSpec {
                dim: DIM,
                bias_direction: Some(f.prior.v()),
                bias_coefficient: 0.3,
                subspace: Some(&f.basis),
            },
        ),
    ];
    for (name, spec) in &specs {
        let mut rng = RngStream::new(1, 0);
        group.bench_function(*name, |b| b.iter(|| sample_biased(black_box(spec), &mut rng).unwrap()));
    }
    group.finish();
}

fn estimation(c: &mut Criterion) {
    let f = Fixture::new(DIM, SUBSPACE);
    let oracle = LocalOracle::new(f.model.clone());
    let mut group = c.benchmark_group("estimate");
    group.sample_size(20);
    for method in [Method::Rgf, Method::Prgf, Method::RgfD, Method::PrgfD, Method::Avg] {
        let cfg = EstimatorConfig::new(method, DIM);
        group.bench_with_input(BenchmarkId::from_parameter(method), &cfg, |b, cfg| {
            let mut rng = RngStream::new(2, 0);
            b.iter(|| {
                let mut stats = PriorStats::default();
                estimate(
                    &oracle,
                    &f.x,
                    f.label,
                    None,
                    Some(&f.prior),
                    Some(&f.basis),
                    cfg,
                    &mut stats,
                    &mut rng,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn coefficients(c: &mut Criterion) {
    c.bench_function("lambda_star", |b| {
        b.iter(|| lambda_star(black_box(0.16), black_box(50), black_box(DIM)))
    });
}

criterion_group!(benches, sampling, estimation, coefficients);
criterion_main!(benches);
