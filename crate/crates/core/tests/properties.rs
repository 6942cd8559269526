use posrec_core::datapipe::{
    augment, filter_with, session_prefixes, split, Dataset, FilterSpec, Fraction, SplitSpec, TestRule, Vocab,
};
use posrec_core::evalkit::{rank_of_label, MetricsReport};
use posrec_core::posrec::{rank_items, score};
use posrec_core::{Manifest, Session, Tensor};
use proptest::prelude::*;

fn dataset(raw: Vec<Vec<u8>>, starts: Vec<u32>) -> Dataset {
    let vocab = Vocab::from_raw(raw.iter().flatten().map(|i| i.to_string()));
    let sessions = raw
        .iter()
        .zip(starts.iter().chain(std::iter::repeat(&0)))
        .enumerate()
        .map(|(k, (items, &start))| Session {
            id: k.to_string(),
            items: items.iter().map(|i| vocab.get(&i.to_string()).unwrap()).collect(),
            timestamps: Some(
                (0..items.len())
                    .map(|t| start as f64 * 600.0 + t as f64 * 60.0)
                    .collect(),
            ),
            label: None,
        })
        .collect();
    Dataset {
        sessions,
        vocab,
        manifest: Manifest::new(),
    }
}

fn sessions() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..12, 1..8), 1..40)
}

proptest! {
    #[test]
    fn filter_is_idempotent(raw in sessions(), min_count in 1usize..6, min_len in 1usize..4) {
        let spec = FilterSpec { min_item_count: min_count, min_session_len: min_len, to_fixpoint: true };
        if let Ok(once) = filter_with(dataset(raw, vec![]), spec) {
            let twice = filter_with(once.clone(), spec).unwrap();
            prop_assert_eq!(&once.sessions, &twice.sessions);
            prop_assert_eq!(&once.vocab, &twice.vocab);
            let mut counts = vec![0usize; once.vocab.len()];
            for s in &once.sessions {
                prop_assert!(s.len() >= min_len);
                for &i in &s.items {
                    counts[i] += 1;
                }
            }
            prop_assert!(counts.iter().all(|&c| c >= min_count));
        }
    }

    #[test]
    fn augment_counts_and_reconstructs(raw in prop::collection::vec(prop::collection::vec(0u8..12, 2..9), 1..30)) {
        let ds = dataset(raw, vec![]);
        let pairs = augment(&ds);
        let st = ds.stats();
        prop_assert_eq!(pairs.len(), st.clicks - st.sessions);
        for s in &ds.sessions {
            let prefixes: Vec<Session> = session_prefixes(s).collect();
            prop_assert_eq!(prefixes.len(), s.len() - 1);
            for (i, p) in prefixes.iter().enumerate() {
                prop_assert_eq!(&p.items[..], &s.items[..=i]);
                prop_assert_eq!(p.label, Some(s.items[i + 1]));
            }
            let last = prefixes.last().unwrap();
            let mut whole = last.items.clone();
            whole.push(last.label.unwrap());
            prop_assert_eq!(whole, s.items.clone());
        }
    }

    #[test]
    fn split_is_temporally_ordered(
        raw in prop::collection::vec(prop::collection::vec(0u8..6, 2..6), 4..40),
        starts in prop::collection::vec(0u32..600, 40),
        den in prop::sample::select(vec![1u32, 2, 4]),
    ) {
        let ds = dataset(raw, starts);
        let spec = SplitSpec { test_rule: TestRule::FinalDays(1), fraction: Fraction::new(1, den).unwrap(), augment: true };
        if let Ok(sp) = split(&ds, spec) {
            let train_end = sp.train.sessions.iter().filter_map(Session::last_timestamp).fold(f64::MIN, f64::max);
            let test_start = sp.test.sessions.iter().filter_map(Session::first_timestamp).fold(f64::MAX, f64::min);
            prop_assert!(train_end < sp.cutoff && sp.cutoff <= test_start);
            prop_assert!(sp.test.sessions.iter().all(|s| s.len() >= 2));
            sp.train.validate().unwrap();
            sp.test.validate().unwrap();
            prop_assert_eq!(sp.train.used_items(), sp.train.vocab.len());
        }
    }

    #[test]
    fn vocab_is_a_bijection(ids in prop::collection::vec("[a-z0-9]{1,4}", 0..50)) {
        let v = Vocab::from_raw(ids.clone());
        let distinct: std::collections::BTreeSet<&String> = ids.iter().collect();
        prop_assert_eq!(v.len(), distinct.len());
        for i in 0..v.len() {
            prop_assert_eq!(v.get(v.raw(i)), Some(i));
        }
        for id in &ids {
            prop_assert_eq!(v.raw(v.get(id).unwrap()), id.as_str());
        }
    }

    #[test]
    fn softmax_scores_sum_to_one(
        table in prop::collection::vec(-30.0f64..30.0, 4 * 7),
        h in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let x = Tensor::matrix(7, 4, table).unwrap();
        let p = score(&h, &x).unwrap();
        let total: f64 = p.scores.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(p.scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
        prop_assert_eq!(p.top_k, rank_items(&p.scores));
    }

    #[test]
    fn metrics_match_sorting_oracle(
        cases in prop::collection::vec((prop::collection::vec(0u8..4, 12), 0usize..12), 1..30),
    ) {
        let mut ranks = Vec::new();
        let mut hits = [0.0; 3];
        let mut rr = [0.0; 3];
        for (scores, label) in &cases {
            let scores: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let mut order: Vec<(i64, usize)> = scores.iter().enumerate().map(|(i, &s)| (-(s as i64), i)).collect();
            order.sort();
            let rank = order.iter().position(|&(_, i)| i == *label).unwrap() + 1;
            prop_assert_eq!(rank_of_label(&scores, *label), Some(rank));
            ranks.push(Some(rank));
            for (slot, k) in [1usize, 5, 10].into_iter().enumerate() {
                if rank <= k {
                    hits[slot] += 1.0;
                    rr[slot] += 1.0 / rank as f64;
                }
            }
        }
        let n = cases.len() as f64;
        let r = MetricsReport::from_ranks(&ranks, &[1, 5, 10]).unwrap();
        for (slot, k) in [1usize, 5, 10].into_iter().enumerate() {
            prop_assert_eq!(r.recall_at(k), Some(hits[slot] / n));
            prop_assert_eq!(r.mrr_at(k), Some(rr[slot] / n));
        }
        prop_assert!(r.recall_at(1) <= r.recall_at(5) && r.recall_at(5) <= r.recall_at(10));
        prop_assert!(r.mrr_at(5) <= r.mrr_at(10));
        prop_assert!(r.mrr_at(10) <= r.recall_at(10));
    }
}
