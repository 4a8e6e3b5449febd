use adagraph_bench::{bench_config, random_matrix, synthetic_data};
use adagraph_core::graph::{gumbel_topk_adjacency, knn_graph, mask_diagonal, median_sigma, rbf_similarity};
use adagraph_core::objectives::zinb_nll;
use adagraph_core::trainer::Trainer;
use adagraph_core::{RngState, Tape};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
                tape.matmul(av, bv).unwrap()
            })
        });
    }
    group.finish();
}

fn knn(c: &mut Criterion) {
    let x = random_matrix(1000, 50, 3);
    c.bench_function("knn_graph/1000x50/k15", |b| b.iter(|| knn_graph(&x, 15).unwrap()));
}

fn sampler(c: &mut Criterion) {
    let z = random_matrix(500, 16, 4);
    let sigma = median_sigma(&z);
    c.bench_function("gumbel_topk/500/k15", |b| {
        let mut rng = RngState::new(5);
        b.iter(|| {
            let mut tape = Tape::new();
            let zv = tape.parameter(z.clone());
            let s = rbf_similarity(&mut tape, zv, sigma).unwrap();
            let s = mask_diagonal(&mut tape, s).unwrap();
            let a = gumbel_topk_adjacency(&mut tape, s, 15, 1.0, &mut rng).unwrap();
            let loss = tape.sum(a.straight_through);
            tape.backward(loss).unwrap()
        })
    });
}

fn zinb(c: &mut Criterion) {
    let mut rng = RngState::new(6);
    let x = rng.sample_uniform(&[300, 300]).map(|u| (u * 6.0).floor());
    let pi = rng.sample_uniform(&[300, 300]).map(|u| 0.05 + 0.9 * u);
    let mu = rng.sample_uniform(&[300, 300]).map(|u| 0.1 + 5.0 * u);
    let theta = rng.sample_uniform(&[300, 300]).map(|u| 0.1 + 5.0 * u);
    c.bench_function("zinb_nll/300x300/backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (p, m, t) = (tape.parameter(pi.clone()), tape.parameter(mu.clone()), tape.parameter(theta.clone()));
            let l = zinb_nll(&mut tape, &x, p, m, t).unwrap();
            tape.backward(l).unwrap()
        })
    });
}

fn epoch(c: &mut Criterion) {
    let data = synthetic_data(300, 100, 3);
    let trainer = Trainer::new(&data, bench_config(3)).unwrap();
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    group.bench_function("pretrain/300x100", |b| {
        b.iter_batched(|| trainer.clone(), |mut t| t.pretrain_epoch().unwrap().loss.total, criterion::BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, matmul, knn, sampler, zinb, epoch);
criterion_main!(benches);
