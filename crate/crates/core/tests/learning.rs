use posrec_core::datapipe::{last_item_pairs, split_tail, synth_generate};
use posrec_core::evalkit::{evaluate, train, TrainConfig};
use posrec_core::{EncodingKind, ModelConfig, Session};

/// Replaces the synthetic label with one that depends on the last click only.
fn relabel(pairs: Vec<Session>) -> Vec<Session> {
    pairs
        .into_iter()
        .map(|mut s| {
            s.label = Some(17 * s.items.last().unwrap() % 50);
            s
        })
        .collect()
}

#[test]
fn learns_a_last_item_rule() {
    let ds = synth_generate(50, 5000, (2, 10), 7).unwrap();
    let (tr, te) = split_tail(&ds, 500).unwrap();
    let (tr, te) = (relabel(last_item_pairs(&tr)), relabel(last_item_pairs(&te)));
    let cfg = TrainConfig {
        model: ModelConfig::new(0, 32, EncodingKind::Ldpe),
        ..TrainConfig::default()
    };
    let out = train(&tr, 50, &cfg).unwrap();
    let r = evaluate(&out.model, &te, &[1, 5]).unwrap();
    assert!(r.recall_at(1).unwrap() >= 0.9, "{}", r.summary());
}
