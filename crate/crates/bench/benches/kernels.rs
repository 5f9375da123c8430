use criterion::{black_box, criterion_group, criterion_main, Criterion};
use cueflow::nn::{LstmCell, ParamStore};
use cueflow::rng::seeded;
use cueflow::trainer::{rollout, supervised_loss};
use cueflow_bench::fixture;

fn lstm_step(c: &mut Criterion) {
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "bench", 96, 64, &mut seeded(0));
    let x = vec![0.1; 96];
    let (h, s) = cell.zero_state();
    c.bench_function("lstm_step", |b| {
        b.iter(|| cell.forward(&store, black_box(&x), black_box(&h), black_box(&s)))
    });
}

fn supervised(c: &mut Criterion) {
    let f = fixture();
    let prepared = f.bundle.prepare(&f.instances[0]);
    c.bench_function("supervised_loss", |b| {
        b.iter(|| supervised_loss(black_box(&prepared), &f.bundle, false).expect("finite loss"))
    });
}

fn rollouts(c: &mut Criterion) {
    let f = fixture();
    let mut rng = seeded(1);
    c.bench_function("rollout", |b| {
        b.iter(|| rollout(black_box(&f.instances[0]), &f.bundle, &f.rewards, 3, &mut rng).expect("rollout"))
    });
}

criterion_group!(benches, lstm_step, supervised, rollouts);
criterion_main!(benches);
