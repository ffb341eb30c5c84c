use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prefgeo_bench::instance;
use prefgeo_core::estimators::laplace::laplace_mode_and_hessian;
use prefgeo_core::field::correlation_matrix;
use prefgeo_core::predictor::mh::{BlockSampler, ChainState, Posterior};
use prefgeo_core::rng::rng_from_seed;
use prefgeo_core::Factor;

fn sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("mh_sweep");
    for (nx, ny) in [(15, 15), (30, 30)] {
        let (grid, data, theta) = instance(nx, ny, 100, 1);
        let post = Posterior::new(&theta, &data, &grid).unwrap();
        for block in [1, 5, 10] {
            let id = BenchmarkId::new(format!("cells{}", grid.len()), block);
            group.bench_function(id, |b| {
                let mut state = ChainState::new(&post, vec![0.0; grid.len()]);
                let mut sampler = BlockSampler::new(&post, block, 0.5 * theta.sigma2.sqrt(), rng_from_seed(3));
                b.iter(|| sampler.sweep(&mut state));
            });
        }
    }
    group.finish();
}

fn numerics(c: &mut Criterion) {
    let (grid, data, theta) = instance(15, 15, 100, 2);
    let r = correlation_matrix(grid.centroids(), theta.phi).unwrap();
    c.bench_function("cholesky_225", |b| b.iter(|| Factor::new(r.clone()).unwrap()));
    c.bench_function("laplace_mode_225", |b| {
        b.iter(|| laplace_mode_and_hessian(&theta, &data, &grid).unwrap())
    });
}

criterion_group!(benches, sweeps, numerics);
criterion_main!(benches);
