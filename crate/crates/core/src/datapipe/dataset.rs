use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::manifest::Manifest;
use crate::sessgraph::Session;

/// Bijection between raw item ids and contiguous indices `[0, m)`.
///
/// Indices follow the sort order of the raw ids, numeric when every id is a
/// non-negative integer and lexicographic otherwise.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_raw<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut raw: Vec<String> = ids.into_iter().map(Into::into).collect();
        raw.sort_unstable();
        raw.dedup();
        if raw.iter().all(|r| r.parse::<u64>().is_ok()) {
            raw.sort_by_key(|r| r.parse::<u64>().unwrap());
        }
        let index = raw.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        Vocab { raw, index }
    }

    /// Keeps the given order; duplicate ids are rejected.
    pub fn from_ordered(raw: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            if index.insert(r.clone(), i).is_some() {
                return Err(invalid!("item `{r}` listed twice"));
            }
        }
        Ok(Vocab { raw, index })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self, index: usize) -> &str {
        &self.raw[index]
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }

    /// Keeps the items flagged in `keep`, preserving their relative order.
    /// Returns the new vocabulary and the old-to-new index map.
    pub fn restrict(&self, keep: &[bool]) -> (Vocab, Vec<Option<usize>>) {
        let mut raw = Vec::new();
        let remap = keep
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                k.then(|| {
                    raw.push(self.raw[i].clone());
                    raw.len() - 1
                })
            })
            .collect();
        let index = raw.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        (Vocab { raw, index }, remap)
    }
}

/// Sessions over a vocabulary, with a manifest describing how they were made.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sessions: Vec<Session>,
    pub vocab: Vocab,
    pub manifest: Manifest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub clicks: usize,
    pub sessions: usize,
    pub items: usize,
    pub avg_len: f64,
}

impl Dataset {
    pub fn stats(&self) -> DatasetStats {
        let clicks: usize = self.sessions.iter().map(Session::len).sum();
        let sessions = self.sessions.len();
        DatasetStats {
            clicks,
            sessions,
            items: self.vocab.len(),
            avg_len: if sessions == 0 {
                0.0
            } else {
                clicks as f64 / sessions as f64
            },
        }
    }

    /// Number of distinct items that actually occur in some session.
    pub fn used_items(&self) -> usize {
        let mut seen = vec![false; self.vocab.len()];
        for s in &self.sessions {
            for &i in &s.items {
                seen[i] = true;
            }
        }
        seen.into_iter().filter(|&b| b).count()
    }

    /// Checks that every item is inside the vocabulary and every session is
    /// well formed.
    pub fn validate(&self) -> Result<()> {
        for s in &self.sessions {
            s.validate()?;
            if let Some(&bad) = s.items.iter().find(|&&i| i >= self.vocab.len()) {
                return Err(invalid!(
                    "session `{}` refers to item {bad} outside the vocabulary",
                    s.id
                ));
            }
        }
        Ok(())
    }

    /// Drops items outside the used set and renumbers the rest contiguously.
    pub fn reindexed(mut self) -> Dataset {
        let mut keep = vec![false; self.vocab.len()];
        for s in &self.sessions {
            for &i in &s.items {
                keep[i] = true;
            }
        }
        let (vocab, remap) = self.vocab.restrict(&keep);
        for s in &mut self.sessions {
            for i in &mut s.items {
                *i = remap[*i].expect("used item kept");
            }
        }
        self.vocab = vocab;
        self
    }

    /// Re-expresses the sessions over `vocab`, dropping unknown items and
    /// sessions left shorter than `min_len`.
    pub fn remap_onto(&self, vocab: &Vocab, min_len: usize) -> Dataset {
        let sessions = self
            .sessions
            .iter()
            .filter_map(|s| {
                let keep: Vec<Option<usize>> = s.items.iter().map(|&i| vocab.get(self.vocab.raw(i))).collect();
                let items: Vec<usize> = keep.iter().flatten().copied().collect();
                let timestamps = s.timestamps.as_ref().map(|t| {
                    t.iter()
                        .zip(&keep)
                        .filter(|(_, k)| k.is_some())
                        .map(|(t, _)| *t)
                        .collect()
                });
                (items.len() >= min_len.max(1)).then(|| Session {
                    id: s.id.clone(),
                    items,
                    timestamps,
                    label: None,
                })
            })
            .collect();
        Dataset {
            sessions,
            vocab: vocab.clone(),
            manifest: self.manifest.clone(),
        }
    }

    /// Records the current counts in the manifest.
    pub fn record_stats(&mut self, prefix: &str) {
        let st = self.stats();
        self.manifest
            .set(format!("{prefix}clicks"), st.clicks)
            .set(format!("{prefix}sessions"), st.sessions)
            .set(format!("{prefix}items"), st.items)
            .set(format!("{prefix}avg_len"), format!("{:.4}", st.avg_len));
    }

    /// Normalized `session_id\tunix_timestamp\titem_id` lines. Sessions
    /// without timestamps are written with click indices as timestamps.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.sessions {
            for (k, &item) in s.items.iter().enumerate() {
                let ts = s.timestamps.as_ref().map_or(k as f64, |t| t[k]);
                writeln!(out, "{}\t{}\t{}", s.id, ts, self.vocab.raw(item)).unwrap();
            }
        }
        out
    }

    /// Writes the TSV to `path` and the manifest next to it
    /// (`<path>.manifest`).
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))?;
        self.manifest.write(&manifest_path(path))
    }
}

/// `<path>.manifest`
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    s.into()
}
