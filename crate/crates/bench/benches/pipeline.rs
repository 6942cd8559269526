use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use posrec_core::datapipe::{augment, filter_dataset, last_item_pairs, synth_generate};
use posrec_core::evalkit::{batch_gradients, evaluate};
use posrec_core::posenc::{EncodingKind, EncodingScheme};
use posrec_core::sessgraph::{attach_anchors, build_session_graph, AnchorWeighting};
use posrec_core::{ModelConfig, PosRecModel, Session};

fn model(kind: EncodingKind) -> PosRecModel {
    let mut cfg = ModelConfig::new(200, 32, kind);
    cfg.max_len = 20;
    PosRecModel::new(cfg).unwrap()
}

fn encodings(c: &mut Criterion) {
    let mut g = c.benchmark_group("encode");
    for kind in [EncodingKind::Spe, EncodingKind::Dpe, EncodingKind::Ldpe] {
        let scheme = EncodingScheme::new(kind, 100, 50, 1).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(kind), &scheme, |b, s| {
            b.iter(|| {
                for p in 0..50 {
                    black_box(s.encode(p, 50).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn graphs(c: &mut Criterion) {
    let session = Session::new((0..40).map(|i| (i * 7) % 13).collect()).unwrap();
    c.bench_function("graph/build+anchors", |b| {
        b.iter(|| {
            let g = build_session_graph(black_box(&session)).unwrap();
            black_box(attach_anchors(g, AnchorWeighting::Distance))
        })
    });
}

fn model_passes(c: &mut Criterion) {
    let ds = synth_generate(200, 64, (4, 12), 3).unwrap();
    let pairs = last_item_pairs(&ds);
    let m = model(EncodingKind::Ldpe);
    c.bench_function("model/forward", |b| {
        b.iter(|| black_box(m.forward_full(&pairs[0]).unwrap()))
    });
    c.bench_function("model/gradients_batch64", |b| {
        b.iter(|| black_box(batch_gradients(&m, &pairs).unwrap()))
    });
    c.bench_function("model/evaluate_64", |b| {
        b.iter(|| black_box(evaluate(&m, &pairs, &[5, 10]).unwrap()))
    });
}

fn preprocessing(c: &mut Criterion) {
    let ds = synth_generate(500, 2000, (2, 15), 9).unwrap();
    c.bench_function("datapipe/filter", |b| {
        b.iter(|| black_box(filter_dataset(ds.clone()).unwrap()))
    });
    c.bench_function("datapipe/augment", |b| b.iter(|| black_box(augment(&ds))));
}

criterion_group!(benches, encodings, graphs, model_passes, preprocessing);
criterion_main!(benches);
