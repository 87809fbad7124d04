use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dazzle_bench::{bundled_net, desk_timings, four_pulses, hd_timings, sample_image};
use dazzle_core::attack::{chain_gradient, objective_gradient, AttackConfig, TrainEvaluator};
use dazzle_core::classifier::Classifier;
use dazzle_core::photopic::threshold_surface;
use dazzle_core::synthesis::{compose, kronecker_pattern, rendered_pattern};
use dazzle_core::PhotopicScene;

fn patterns(c: &mut Criterion) {
    for (name, t) in [("desk", desk_timings()), ("hd", hd_timings())] {
        let train = four_pulses(&t);
        c.bench_function(&format!("kronecker_pattern/{name}"), |b| {
            b.iter(|| kronecker_pattern(&t, black_box(&train), 3).unwrap())
        });
        c.bench_function(&format!("rendered_pattern/{name}"), |b| {
            b.iter(|| rendered_pattern(&t, black_box(&train), 3).unwrap())
        });
    }
    let t = desk_timings();
    let (x, _) = sample_image();
    let delta = kronecker_pattern(&t, &four_pulses(&t), 0).unwrap();
    c.bench_function("compose/desk", |b| b.iter(|| compose(black_box(&x), &delta, 1.0).unwrap()));
}

fn photopic(c: &mut Criterion) {
    let base = PhotopicScene::reference(5.0);
    let thetas: Vec<f64> = (1..=30).map(f64::from).collect();
    let l_bs = [1.0, 10.0, 100.0, 1000.0];
    c.bench_function("threshold_surface/30x4", |b| {
        b.iter(|| threshold_surface(black_box(&thetas), &l_bs, &base).unwrap())
    });
}

fn classifier(c: &mut Criterion) {
    let net = bundled_net();
    let (x, label) = sample_image();
    c.bench_function("convnet/logits", |b| b.iter(|| net.logits(black_box(&x)).unwrap()));
    c.bench_function("convnet/input_gradient", |b| {
        b.iter(|| net.input_gradient(black_box(&x), label).unwrap())
    });
}

fn attack(c: &mut Criterion) {
    let t = desk_timings();
    let net = bundled_net();
    let (x, label) = sample_image();
    let omega = vec![-2.0; t.pulse_slots()];
    c.bench_function("attack/chain_gradient", |b| {
        b.iter(|| chain_gradient(black_box(&omega), &x, label, &net, &t, 5, 1.0).unwrap())
    });
    let cfg = AttackConfig::default();
    let shifts: Vec<usize> = (0..cfg.eot_samples).map(|i| i % t.pulse_slots()).collect();
    c.bench_function("attack/objective_gradient_eot16", |b| {
        b.iter(|| objective_gradient(black_box(&omega), &x, label, &net, &t, &cfg, &shifts).unwrap())
    });
    let train = four_pulses(&t);
    let all: Vec<usize> = (0..t.pulse_slots()).collect();
    c.bench_function("attack/score_all_shifts", |b| {
        b.iter(|| {
            let mut eval = TrainEvaluator::new(&x, label, &net, &t, 1.0).unwrap();
            eval.outcomes(black_box(&train), &all).unwrap()
        })
    });
}

criterion_group!(benches, patterns, photopic, classifier, attack);
criterion_main!(benches);
