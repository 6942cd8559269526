use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Vocab};
use crate::error::{invalid, Result};
use crate::manifest::Manifest;
use crate::sessgraph::Session;

pub const SYNTH_START_TS: f64 = 1_600_000_000.0;
pub const SYNTH_MIN_ITEMS: usize = 10;
pub const SYNTH_MAX_LEN: usize = 19;

/// Next item of a synthetic session, a joint function of its first and last
/// clicks.
pub fn synth_label(first: usize, last: usize, m: usize) -> usize {
    (31 * first + 17 * last) % m
}

/// `n_sessions` sessions of uniformly drawn items with lengths in
/// `len_range`; each session ends with one extra click, its label.
pub fn synth_generate(m: usize, n_sessions: usize, len_range: (usize, usize), seed: u64) -> Result<Dataset> {
    let (lo, hi) = len_range;
    if m < SYNTH_MIN_ITEMS {
        return Err(invalid!(
            "synthetic vocabulary needs at least {SYNTH_MIN_ITEMS} items, got {m}"
        ));
    }
    if lo < 2 || hi > SYNTH_MAX_LEN || lo > hi {
        return Err(invalid!(
            "session lengths {lo}..={hi} must lie within 2..={SYNTH_MAX_LEN}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions = (0..n_sessions)
        .map(|k| {
            let n = rng.gen_range(lo..=hi);
            let mut items: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
            items.push(synth_label(items[0], items[n - 1], m));
            let start = SYNTH_START_TS + 3600.0 * k as f64;
            Session {
                id: format!("{k}"),
                timestamps: Some((0..items.len()).map(|i| start + i as f64).collect()),
                items,
                label: None,
            }
        })
        .collect();
    let mut manifest = Manifest::new();
    manifest
        .set("source", "synthetic")
        .set("rule", "label = (31*first + 17*last) mod m")
        .set("m", m)
        .set("n_sessions", n_sessions)
        .set("len_min", lo)
        .set("len_max", hi)
        .set("seed", seed);
    let mut ds = Dataset {
        sessions,
        vocab: Vocab::from_raw((0..m).map(|i| i.to_string())),
        manifest,
    };
    ds.record_stats("");
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::filter::last_item_pairs;

    #[test]
    fn label_rule() {
        assert_eq!(synth_label(3, 7, 50), 12);
        assert_eq!(synth_label(0, 0, 50), 0);
    }

    #[test]
    fn generator_contract() {
        let ds = synth_generate(50, 300, (2, 6), 7).unwrap();
        assert_eq!(ds, synth_generate(50, 300, (2, 6), 7).unwrap());
        assert_ne!(ds.sessions, synth_generate(50, 300, (2, 6), 8).unwrap().sessions);
        assert_eq!(ds.vocab.len(), 50);
        ds.validate().unwrap();
        for p in last_item_pairs(&ds) {
            assert!((2..=6).contains(&p.len()));
            assert_eq!(p.label, Some(synth_label(p.items[0], *p.items.last().unwrap(), 50)));
        }
        assert_eq!(ds.manifest.get("seed"), Some("7"));
    }

    #[test]
    fn preconditions() {
        assert!(synth_generate(9, 10, (2, 5), 0).is_err());
        assert!(synth_generate(10, 10, (1, 5), 0).is_err());
        assert!(synth_generate(10, 10, (2, 20), 0).is_err());
    }
}
