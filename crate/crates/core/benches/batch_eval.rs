use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use react_core::backbone::Vocabulary;
use react_core::data::{synthetic_splits, LabelSpace};
use react_core::par::Exec;
use react_core::train::{sample_gradients, SupervisionMode};
use react_core::{ModelConfig, ReactModel};

fn bench_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.model.d_model = 32;
    cfg.model.num_heads = 4;
    cfg.model.ff_mult = 2;
    cfg.model.frames = 4;
    cfg.model.queries = 3;
    cfg.model.dropout = 0.0;
    cfg.video.height = 32;
    cfg.video.width = 32;
    cfg.video.grid_h = 4;
    cfg.video.grid_w = 4;
    cfg.data.total_frames = 4;
    cfg.data.clips = 16;
    cfg.data.train_ratio = 1.0;
    cfg
}

fn batch_gradients(c: &mut Criterion) {
    let cfg = bench_config();
    let labels = LabelSpace::synthetic(cfg.model.num_actions).unwrap();
    let (samples, _) = synthetic_splits(&cfg, &labels, Exec::Sequential).unwrap();
    let (model, store) = ReactModel::new(&cfg, Vocabulary::builtin(), 0).unwrap();
    let prompt = model.tokenize(&cfg.data.prompt).unwrap();
    let mut group = c.benchmark_group("batch_forward_backward");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                exec.map(&samples, |s| sample_gradients(&model, &store, s, &prompt, SupervisionMode::Full, 0).unwrap().0.total)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients);
criterion_main!(benches);
