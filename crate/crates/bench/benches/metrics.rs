use criterion::{black_box, criterion_group, criterion_main, Criterion};
use suq_core::calibration::bin_predictions;
use suq_core::error_analysis::{default_tau_grid, threshold_profile};
use suq_core::measures::{mean_probability, normalized_entropy};
use suq_core::synth::{generate_subject, SynthConfig};

fn metrics(c: &mut Criterion) {
    let mut cfg = SynthConfig::new(vec![240, 240, 16], 1);
    cfg.n_samples = 20;
    let s = generate_subject(&cfg, 0).unwrap();
    let stack = s.stack.clone().unwrap();
    let grid = default_tau_grid();
    let pred = s.prob.predict();
    let q = normalized_entropy(&s.prob);

    c.bench_function("mean_probability_20", |b| b.iter(|| mean_probability(black_box(&stack))));
    c.bench_function("normalized_entropy", |b| b.iter(|| normalized_entropy(black_box(&s.prob))));
    c.bench_function("bin_predictions", |b| {
        b.iter(|| bin_predictions(black_box(&s.prob), &s.ground_truth, 10, None).unwrap())
    });
    c.bench_function("threshold_profile_19", |b| {
        b.iter(|| threshold_profile(black_box(&q), &pred, &s.ground_truth, None, &grid).unwrap())
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
