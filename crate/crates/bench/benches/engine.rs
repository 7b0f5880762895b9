use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use csi_bench::fixture;
use csi_core::inference::generate;
use csi_core::model::apply_prior;
use csi_core::numerics::Tape;
use csi_core::training::{backward_model_loss, forward_losses, EncodedExample};
use csi_core::GenerationRequest;

fn decoding(c: &mut Criterion) {
    let fx = fixture(32);
    let doc = &fx.corpus[0].document;
    let ids = fx.forward.vocab.encode(&doc.tokens);
    let enc = fx.forward.encode(&ids).unwrap();
    let hook = apply_prior(&fx.forward.hook_forward(&enc).unwrap(), &[0, 1, 2]).unwrap();
    let state = fx.forward.initial_state(&enc);

    c.bench_function("decode_step h32", |b| {
        b.iter(|| {
            fx.forward
                .decode_step(&enc, &hook, black_box(1), &state)
                .unwrap()
        })
    });
    c.bench_function("generate init_with 3 greedy", |b| {
        b.iter(|| generate(&fx.forward, doc, &GenerationRequest::init_with(3)).unwrap())
    });
    c.bench_function("generate init_with 1 beam 4", |b| {
        b.iter(|| {
            generate(
                &fx.forward,
                doc,
                &GenerationRequest::init_with(1).with_beam(4),
            )
            .unwrap()
        })
    });
}

fn attribution(c: &mut Criterion) {
    let fx = fixture(32);
    let ex = &fx.corpus[1];
    c.bench_function("backward attribute", |b| {
        b.iter(|| {
            fx.backward
                .attribute(&ex.document, &ex.summary_tokens, 0.5)
                .unwrap()
        })
    });
}

fn gradients(c: &mut Criterion) {
    let fx = fixture(32);
    let ex = EncodedExample::new(&fx.corpus[2], &fx.forward.vocab);
    c.bench_function("forward loss + backprop", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let losses = forward_losses(&mut tape, &fx.forward.params, &ex).unwrap();
                tape.backward(losses.total).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("backward-model loss + backprop", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let loss = backward_model_loss(&mut tape, &fx.backward.params, &ex).unwrap();
                tape.backward(loss).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, decoding, attribution, gradients);
criterion_main!(benches);
