//! Kernel timings on the rayon pool against a single worker thread, plus the
//! purely sequential build (`cargo bench --no-default-features`).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;
use sageattn_core::attention::{flash_attention_fp, naive_attention, sage_attention, DEFAULT_BLOCK_KV, DEFAULT_BLOCK_Q};
use sageattn_core::io::{generate, SynthDistribution, SynthSpec};
use sageattn_core::{KernelVariant, Shape4};

/// Runs `f` on `pool`, or on the caller's default pool when `None`.
fn on<R: Send>(pool: Option<&ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn bench(c: &mut Criterion) {
    let spec = SynthSpec::new(SynthDistribution::StandardNormal, Shape4::new(1, 4, 512, 64), 0);
    let input = generate(&spec).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let modes: Vec<(&str, Option<&ThreadPool>)> = if cfg!(feature = "parallel") {
        vec![("pool", None), ("one-thread", Some(&one))]
    } else {
        vec![("sequential", None)]
    };

    let mut group = c.benchmark_group(format!("attention {}", input.shape()));
    group.sample_size(10);
    for (mode, pool) in modes {
        group.bench_function(BenchmarkId::new("naive-f64", mode), |b| {
            b.iter(|| on(pool, || naive_attention(&input).unwrap()))
        });
        group.bench_function(BenchmarkId::new("flash-fp32", mode), |b| {
            b.iter(|| on(pool, || flash_attention_fp(&input, DEFAULT_BLOCK_Q, DEFAULT_BLOCK_KV).unwrap()))
        });
        for v in KernelVariant::ALL {
            let config = v.config();
            group.bench_function(BenchmarkId::new(v.name(), mode), |b| {
                b.iter(|| on(pool, || sage_attention(&input, &config).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
