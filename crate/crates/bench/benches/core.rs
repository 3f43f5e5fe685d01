use criterion::{black_box, criterion_group, criterion_main, Criterion};
use infergap_core::backend::{generate, Decode, ModelBackend, ToyBackend};
use infergap_core::corpus::{prepare_input, synthetic, TemplateId};
use infergap_core::metrics::{score_corpus, ScoredPair};
use infergap_core::negatives::pick_counterfactuals;
use infergap_core::objective::{finite_diff_check, total_loss, EncodedExample, GradCheckOptions, LossConfig};
use infergap_core::trainer::build_vocab;

fn pairs() -> Vec<ScoredPair> {
    let refs = synthetic::generate(200, 1, "r");
    refs.iter()
        .map(|e| ScoredPair {
            id: e.id.clone(),
            hypothesis: e.counterfactuals[0].clone(),
            reference: e.answer.clone(),
        })
        .collect()
}

fn batch(n: usize, dim: usize) -> (ToyBackend, Vec<EncodedExample>) {
    let examples = synthetic::generate(n, 7, "b");
    let model = ToyBackend::random(build_vocab(&examples, TemplateId::DefaultV1), dim, 7, 0.1);
    let batch = examples
        .iter()
        .map(|e| {
            let negs = pick_counterfactuals(e, 4, 7).unwrap().negatives;
            EncodedExample::new(model.vocab(), e, TemplateId::DefaultV1, &negs)
        })
        .collect();
    (model, batch)
}

fn metrics(c: &mut Criterion) {
    let p = pairs();
    c.bench_function("score_corpus/200", |b| b.iter(|| score_corpus(black_box(&p), None, false).unwrap()));
}

fn objective(c: &mut Criterion) {
    let cfg = LossConfig::default();
    let (model, b64) = batch(64, 32);
    c.bench_function("total_loss/b64_d32_m4", |b| b.iter(|| total_loss(&model, black_box(&b64), &cfg).unwrap()));
    let (small, b4) = batch(4, 4);
    let opts = GradCheckOptions::default();
    c.bench_function("finite_diff_check/b4_d4", |b| {
        b.iter(|| finite_diff_check(&small, black_box(&b4), &cfg, &opts).unwrap())
    });
}

fn decoding(c: &mut Criterion) {
    let examples = synthetic::generate(1, 3, "g");
    let model = ToyBackend::random(build_vocab(&examples, TemplateId::DefaultV1), 32, 3, 0.1);
    let input = model.vocab().encode(&prepare_input(&examples[0], TemplateId::DefaultV1).text);
    c.bench_function("generate/top_k_32", |b| {
        b.iter(|| generate(&model, black_box(&input), Decode::TopK { k: 10, seed: 1 }, 32).unwrap())
    });
}

criterion_group!(benches, metrics, objective, decoding);
criterion_main!(benches);
