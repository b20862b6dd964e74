//! Convolution kernels, timed in both execution modes.
//!
//! `cargo bench -p lunggan-tensor` measures the rayon build and the same
//! kernels pinned to a single worker; `--no-default-features` measures the
//! sequential fallback. Bench ids carry the mode so reports line up.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lunggan_tensor::{ops, parallel, ConvGeometry, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

struct Case {
    name: &'static str,
    x: Tensor,
    w: Tensor,
    geom: ConvGeometry,
    transposed: bool,
}

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    vec![
        Case {
            name: "conv_k4s2_16x32x32",
            x: random(&[4, 8, 16, 32, 32], &mut rng),
            w: random(&[16, 8, 4, 4, 4], &mut rng),
            geom: ConvGeometry::cubic(4, 2, 1),
            transposed: false,
        },
        Case {
            name: "conv_k3s1_8x16x16",
            x: random(&[4, 16, 8, 16, 16], &mut rng),
            w: random(&[16, 16, 3, 3, 3], &mut rng),
            geom: ConvGeometry::cubic(3, 1, 1),
            transposed: false,
        },
        Case {
            name: "convT_k4s2_8x16x16",
            x: random(&[4, 16, 8, 16, 16], &mut rng),
            w: random(&[16, 8, 4, 4, 4], &mut rng),
            geom: ConvGeometry::cubic(4, 2, 1),
            transposed: true,
        },
    ]
}

fn forward(c: &Case) -> Tensor {
    if c.transposed {
        ops::conv_transpose3d_forward(&c.x, &c.w, None, &c.geom)
    } else {
        ops::conv3d_forward(&c.x, &c.w, None, &c.geom)
    }
}

fn forward_backward(c: &Case) -> f64 {
    let tape = Tape::new();
    let x = tape.leaf(c.x.clone());
    let w = tape.leaf(c.w.clone());
    let y = if c.transposed {
        ops::conv_transpose3d(x, w, None, c.geom)
    } else {
        ops::conv3d(x, w, None, c.geom)
    };
    let seed = Tensor::ones(&y.shape());
    let grads = tape.backward(&[(y, seed)]);
    grads.get(w).map(|g| g.sum()).unwrap_or(0.0)
}

fn bench_mode(c: &mut Criterion, mode: &str, pool: Option<&rayon::ThreadPool>) {
    let cases = cases();
    let run = |f: &(dyn Fn() -> f64 + Sync)| match pool {
        Some(p) => p.install(f),
        None => f(),
    };
    let mut group = c.benchmark_group("conv");
    group.sample_size(10);
    for case in &cases {
        group.bench_function(BenchmarkId::new(format!("forward/{mode}"), case.name), |b| {
            b.iter(|| black_box(run(&|| forward(case).sum())))
        });
        group.bench_function(BenchmarkId::new(format!("train_step/{mode}"), case.name), |b| {
            b.iter(|| black_box(run(&|| forward_backward(case))))
        });
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let mode = if parallel::is_parallel() { "rayon" } else { "sequential" };
    bench_mode(c, mode, None);
    if parallel::is_parallel() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        bench_mode(c, "rayon_1thread", Some(&pool));
    }
}

criterion_group!(benches, kernels);
criterion_main!(benches);
