//! Cost of advancing one unit of physical time: IPS is `O(N²)`, RBM-r `O(pN)`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbmr_core::dynamics::{sample_batch, GaussianStream, Stepper};
use rbmr_core::{ModelSpec, ParticleEnsemble};

const KAPPA: f64 = 0.01;
const P: usize = 2;

fn ensemble(n: usize) -> ParticleEnsemble {
    let positions = (0..n).map(|i| (i as f64 / n as f64) - 0.5).collect();
    ParticleEnsemble::new(positions, 1, 0).expect("valid ensemble")
}

fn step_cost(c: &mut Criterion) {
    let model = ModelSpec::quadratic_saturating(1, 1.0, 0.4, 0.5).expect("admissible model");
    let intervals = (1.0 / KAPPA).round() as usize;
    let mut group = c.benchmark_group("unit_time");
    for n in [64usize, 128, 256] {
        group.bench_with_input(BenchmarkId::new("ips", n), &n, |b, &n| {
            let mut stepper = Stepper::new(&model, KAPPA, 1).unwrap();
            let mut noise = GaussianStream::new(ChaCha8Rng::seed_from_u64(1));
            let mut state = ensemble(n);
            b.iter(|| {
                for _ in 0..intervals {
                    stepper.step_ips(&mut state, &mut noise).unwrap();
                }
            });
        });
        group.bench_with_input(BenchmarkId::new("rbmr", n), &n, |b, &n| {
            let mut stepper = Stepper::new(&model, KAPPA, 1).unwrap();
            let mut noise = GaussianStream::new(ChaCha8Rng::seed_from_u64(1));
            let mut batches = ChaCha8Rng::seed_from_u64(2);
            let mut state = ensemble(n);
            b.iter(|| {
                for _ in 0..intervals * n / P {
                    let batch = sample_batch(n, P, &mut batches).unwrap();
                    stepper.step_rbmr(&mut state, &batch, &mut noise).unwrap();
                }
            });
        });
    }
    group.finish();
}

criterion_group!(benches, step_cost);
criterion_main!(benches);
