//! One client's local update and one full federated round.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use flexchill_core::data::{partition_dirichlet, GaussianBlobs};
use flexchill_core::fed::{client_update, run_federated, LocalContext};
use flexchill_core::{build_model, FLConfig, ModelSpec, PartitionSpec};

fn config(rounds: usize) -> FLConfig {
    FLConfig {
        total_clients: 10,
        participants_per_round: 5,
        rounds,
        local_epochs: 2,
        batch_size: 16,
        learning_rate: 0.005,
        temperature: 0.25,
        model: ModelSpec::mlp(20, vec![64], 10),
        partition: PartitionSpec::Dirichlet { alpha: 0.1 },
        ..FLConfig::default()
    }
}

fn client(c: &mut Criterion) {
    let data = GaussianBlobs::new(10, 20, 1.0, 0).unwrap().sample(40, 0).unwrap();
    let cfg = config(1);
    let global = build_model(&cfg.model, 0).unwrap();
    c.bench_function("client update, 400 samples, 2 epochs", |bench| {
        bench.iter(|| black_box(client_update(&global, &data, &cfg, LocalContext { round: 1, client_id: 0 }).unwrap()))
    });
}

fn round(c: &mut Criterion) {
    let blobs = GaussianBlobs::new(10, 20, 1.0, 0).unwrap();
    let (train, test) = (blobs.sample(100, 0).unwrap(), blobs.sample(50, 1).unwrap());
    let cfg = config(1);
    let part = partition_dirichlet(&train, 10, 0.1, 0).unwrap();
    c.bench_function("federated round, 10 clients, 5 participants", |bench| {
        bench.iter(|| black_box(run_federated(&cfg, &train, &part, &test).unwrap().records.len()))
    });
}

criterion_group!(benches, client, round);
criterion_main!(benches);
