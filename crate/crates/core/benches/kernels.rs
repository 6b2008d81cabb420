//! Kernel and step timings. Run once per build to compare the rayon and
//! sequential paths:
//!
//! ```text
//! cargo bench -p ucodec-core
//! cargo bench -p ucodec-core --no-default-features
//! ```
//!
//! Benchmark ids carry the build's mode so both sets sit side by side in
//! `target/criterion`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ucodec_core::codec::{CodecConfig, CodecModel, Waveform};
use ucodec_core::kernels::{par, Graph, Tensor};
use ucodec_core::lm::{HierLm, LmConfig, SynthOptions};
use ucodec_core::objectives::{CodecTrainer, LossWeights, MelConfig, TrainConfig};

fn mode() -> &'static str {
    if par::enabled() {
        "parallel"
    } else {
        "sequential"
    }
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("kernels");
    for len in [1024usize, 8192] {
        let x = Tensor::<f32>::randn(&[32, len], 1.0, &mut rng);
        let w = Tensor::<f32>::randn(&[32, 32, 7], 0.1, &mut rng);
        group.bench_with_input(BenchmarkId::new(format!("conv1d/{}", mode()), len), &len, |b, _| {
            b.iter(|| {
                let mut g = Graph::inference();
                let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
                black_box(g.conv1d(xv, wv, None, 1, 3, 9).unwrap());
            })
        });
    }
    for n in [64usize, 256] {
        let a = Tensor::<f32>::randn(&[n, n], 1.0, &mut rng);
        let bm = Tensor::<f32>::randn(&[n, n], 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::new(format!("matmul/{}", mode()), n), &n, |b, _| {
            b.iter(|| {
                let mut g = Graph::inference();
                let (av, bv) = (g.constant(a.clone()), g.constant(bm.clone()));
                black_box(g.matmul(av, bv).unwrap());
            })
        });
    }
    group.finish();
}

fn steps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("steps");
    group.sample_size(10);

    let model = CodecModel::<f32>::new(CodecConfig::miniature(), &mut rng).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        warmup_steps: 10,
        excerpt: 512,
        weights: LossWeights { adversarial: 0.0, feature_matching: 0.0, ..LossWeights::default() },
        mel: MelConfig::smallest(3),
        ..TrainConfig::default()
    };
    let mut trainer = CodecTrainer::new(model, cfg, &mut rng).unwrap();
    let batch: Vec<Waveform> =
        (0..4).map(|k| Waveform::new((0..512).map(|i| (i as f32 * 0.05 * (k + 1) as f32).sin()).collect(), 16_000)).collect();
    group.bench_function(format!("codec_train_step/{}", mode()), |b| b.iter(|| black_box(trainer.train_step(&batch).unwrap())));

    let lm = HierLm::<f32>::new(LmConfig::desk(8, 1024), &mut rng).unwrap();
    let opts = SynthOptions { max_frames: 10, k_top: 20, temperature: 1.0, ignore_eos: true };
    group.bench_function(format!("lm_synth_10_frames/{}", mode()), |b| {
        b.iter(|| black_box(lm.synthesize(b"benchmark", None, opts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, kernels, steps);
criterion_main!(benches);
