use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use strange_marl::nn::{linear, Tape};
use strange_marl::Rng;
use strange_marl_bench::random_matrix;

fn linear_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear_forward");
    let mut rng = Rng::new(0);
    for (rows, inp, out) in [(64, 96, 32), (1024, 32, 32), (3200, 104, 32)] {
        let x = random_matrix(rows, inp, &mut rng);
        let w = random_matrix(out, inp, &mut rng);
        let b = random_matrix(1, out, &mut rng).reshape(&[out]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{inp}->{out}")), &(), |bench, _| {
            bench.iter(|| linear(black_box(&x), &w, Some(&b)).unwrap())
        });
    }
    group.finish();
}

fn linear_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear_backward");
    let mut rng = Rng::new(1);
    for (rows, inp, out) in [(64, 96, 32), (3200, 104, 32)] {
        let x = random_matrix(rows, inp, &mut rng);
        let w = random_matrix(out, inp, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{inp}->{out}")), &(), |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.constant_ref(&x);
                let wv = tape.constant_ref(&w);
                let wv = tape.detach(wv);
                let y = tape.linear(xv, wv, None).unwrap();
                let h = tape.tanh(y);
                let loss = tape.sum(h).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, linear_forward, linear_backward);
criterion_main!(benches);
