use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use bases_core::loss::AttackGoal;
use bases_core::oracle::{LabelMode, Oracle};
use bases_core::pm::{pm_run, Budget, PmConfig};
use bases_core::search::{bases_attack, SearchConfig};
use bases_core::tensor::Tensor;
use bases_core::zoo::{build_model, default_zoo_specs};
use bases_core::Model;

const SIDE: usize = 12;
const CLASSES: usize = 10;

fn zoo() -> Vec<(String, Model)> {
    default_zoo_specs(SIDE, CLASSES)
        .into_iter()
        .enumerate()
        .map(|(i, (id, spec))| (id, build_model(&spec, 100 + i as u64).unwrap()))
        .collect()
}

fn image() -> Tensor {
    let data = (0..SIDE * SIDE)
        .map(|i| ((i * 37) % 101) as f32 / 100.0)
        .collect();
    Tensor::new(vec![1, SIDE, SIDE], data).unwrap()
}

fn surrogates(zoo: &[(String, Model)]) -> Vec<Model> {
    zoo.iter()
        .filter(|(id, _)| !id.starts_with("victim"))
        .map(|(_, m)| m.clone())
        .collect()
}

fn bench_models(c: &mut Criterion) {
    let zoo = zoo();
    let x = image();
    let upstream = Tensor::from_vec((0..CLASSES).map(|k| k as f32 - 4.5).collect());
    let mut group = c.benchmark_group("model");
    for (id, model) in &zoo {
        group.bench_with_input(BenchmarkId::new("forward", id), model, |b, m| {
            b.iter(|| m.forward(black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("input_gradient", id), model, |b, m| {
            b.iter(|| m.input_gradient(black_box(&x), &upstream).unwrap())
        });
    }
    group.finish();
}

fn bench_pm(c: &mut Criterion) {
    let zoo = zoo();
    let models = surrogates(&zoo);
    let x = image();
    let goal = AttackGoal::targeted(3);
    let zero = Tensor::zeros(x.shape());
    let mut group = c.benchmark_group("pm_run");
    for n in [1, 3, 6] {
        let weights = vec![1.0 / n as f64; n];
        let cfg = PmConfig::with_budget(Budget::linf(16.0 / 255.0));
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| pm_run(&x, &goal, &models[..n], &weights, black_box(&zero), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_attack(c: &mut Criterion) {
    let zoo = zoo();
    let models = surrogates(&zoo);
    let victim = zoo
        .iter()
        .find(|(id, _)| id == "victim-cnn")
        .unwrap()
        .1
        .clone();
    let x = image();
    let pm = PmConfig::with_budget(Budget::linf(2.0 / 255.0));
    let mut cfg = SearchConfig::new(models.len(), pm);
    cfg.max_queries = 10;
    // The small budget keeps runs near the full query count.
    let goal = AttackGoal::targeted(CLASSES - 1);
    c.bench_function("bases_attack/q10", |b| {
        b.iter(|| {
            let mut oracle = Oracle::local(victim.clone(), LabelMode::Soft);
            bases_attack(&x, &goal, &mut oracle, &models, &cfg).unwrap()
        })
    });
}

criterion_group!(benches, bench_models, bench_pm, bench_attack);
criterion_main!(benches);
