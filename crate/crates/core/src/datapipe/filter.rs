use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sessgraph::Session;

pub const MIN_ITEM_COUNT: usize = 5;
pub const MIN_SESSION_LEN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterSpec {
    pub min_item_count: usize,
    pub min_session_len: usize,
    /// Repeat the two rules until nothing changes. A single pass can leave
    /// items under the threshold once short sessions are dropped.
    pub to_fixpoint: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            min_item_count: MIN_ITEM_COUNT,
            min_session_len: MIN_SESSION_LEN,
            to_fixpoint: true,
        }
    }
}

/// Default filtering: rare items out, then short sessions out, to a fixpoint.
pub fn filter_dataset(ds: Dataset) -> Result<Dataset> {
    filter_with(ds, FilterSpec::default())
}

pub fn filter_with(mut ds: Dataset, spec: FilterSpec) -> Result<Dataset> {
    let mut passes = 0;
    loop {
        passes += 1;
        let mut counts = vec![0usize; ds.vocab.len()];
        for s in &ds.sessions {
            for &i in &s.items {
                counts[i] += 1;
            }
        }
        let before_clicks: usize = ds.sessions.iter().map(Session::len).sum();
        let before_sessions = ds.sessions.len();
        for s in &mut ds.sessions {
            let keep: Vec<bool> = s.items.iter().map(|&i| counts[i] >= spec.min_item_count).collect();
            if keep.iter().all(|&k| k) {
                continue;
            }
            let mut k = keep.iter();
            s.items.retain(|_| *k.next().unwrap());
            if let Some(ts) = &mut s.timestamps {
                let mut k = keep.iter();
                ts.retain(|_| *k.next().unwrap());
            }
        }
        ds.sessions.retain(|s| s.len() >= spec.min_session_len);
        let after_clicks: usize = ds.sessions.iter().map(Session::len).sum();
        let stable = after_clicks == before_clicks && ds.sessions.len() == before_sessions;
        if stable || !spec.to_fixpoint {
            break;
        }
    }
    if ds.sessions.is_empty() {
        return Err(Error::Data("filtering removed every session".into()));
    }
    let mut ds = ds.reindexed();
    ds.manifest
        .set("filter.min_item_count", spec.min_item_count)
        .set("filter.min_session_len", spec.min_session_len)
        .set("filter.to_fixpoint", spec.to_fixpoint)
        .set("filter.passes", passes);
    ds.record_stats("filtered_");
    Ok(ds)
}

/// Every prefix of every session paired with the click that follows it:
/// `n - 1` pairs per session of length `n`.
pub fn augment(ds: &Dataset) -> Vec<Session> {
    ds.sessions.iter().flat_map(session_prefixes).collect()
}

pub fn session_prefixes(s: &Session) -> impl Iterator<Item = Session> + '_ {
    (1..s.len()).map(move |i| prefix_pair(s, i))
}

/// One pair per session: everything but the last click, labelled with it.
pub fn last_item_pairs(ds: &Dataset) -> Vec<Session> {
    ds.sessions
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| prefix_pair(s, s.len() - 1))
        .collect()
}

fn prefix_pair(s: &Session, i: usize) -> Session {
    Session {
        id: s.id.clone(),
        items: s.items[..i].to_vec(),
        timestamps: s.timestamps.as_ref().map(|t| t[..i].to_vec()),
        label: Some(s.items[i]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::dataset::Vocab;
    use crate::manifest::Manifest;

    fn ds(sessions: &[&[usize]], m: usize) -> Dataset {
        Dataset {
            sessions: sessions
                .iter()
                .enumerate()
                .map(|(k, s)| Session {
                    id: k.to_string(),
                    items: s.to_vec(),
                    timestamps: None,
                    label: None,
                })
                .collect(),
            vocab: Vocab::from_raw((0..m).map(|i| i.to_string())),
            manifest: Manifest::new(),
        }
    }

    #[test]
    fn count_boundary() {
        // item 0 five times, item 1 four times, item 2 seven times
        let d = ds(&[&[0, 1, 2], &[0, 1, 2], &[0, 1, 2], &[0, 1, 2], &[0, 2], &[2, 2]], 3);
        let f = filter_dataset(d).unwrap();
        assert_eq!(f.vocab.raw_ids(), &["0", "2"]);
        assert_eq!(f.stats().clicks, 5 + 7);
    }

    #[test]
    fn short_sessions_dropped_after_item_removal() {
        let mut sessions: Vec<&[usize]> = vec![&[0, 0, 0, 0, 0], &[0, 9]];
        sessions.push(&[1, 1]);
        let f = filter_dataset(ds(&sessions, 10)).unwrap();
        // [0, 9] shrinks to [0]; [1, 1] has a rare item
        assert_eq!(f.sessions.len(), 1);
        assert_eq!(f.sessions[0].items, vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn fixpoint_versus_single_pass() {
        // dropping [3, 4] leaves item 3 with four clicks
        let d = ds(&[&[3, 3], &[3, 3], &[3, 4], &[0, 0, 0, 0, 0]], 5);
        let once = filter_with(
            d.clone(),
            FilterSpec {
                to_fixpoint: false,
                ..FilterSpec::default()
            },
        )
        .unwrap();
        assert_eq!(once.sessions.len(), 3);
        let again = filter_with(
            once.clone(),
            FilterSpec {
                to_fixpoint: false,
                ..FilterSpec::default()
            },
        )
        .unwrap();
        assert_ne!(once.sessions, again.sessions);
        let full = filter_dataset(d).unwrap();
        assert_eq!(full.sessions.len(), 1);
        assert_eq!(filter_dataset(full.clone()).unwrap().sessions, full.sessions);
    }

    #[test]
    fn empty_result_fails() {
        assert!(filter_dataset(ds(&[&[0, 1]], 2)).is_err());
    }

    #[test]
    fn augmentation_pairs() {
        let d = ds(&[&[0, 1, 2, 3], &[4, 5]], 6);
        let pairs = augment(&d);
        let got: Vec<(Vec<usize>, usize)> = pairs.iter().map(|p| (p.items.clone(), p.label.unwrap())).collect();
        assert_eq!(
            got,
            vec![(vec![0], 1), (vec![0, 1], 2), (vec![0, 1, 2], 3), (vec![4], 5)]
        );
        let last = last_item_pairs(&d);
        assert_eq!(last.len(), 2);
        assert_eq!(last[0].items, vec![0, 1, 2]);
    }
}
