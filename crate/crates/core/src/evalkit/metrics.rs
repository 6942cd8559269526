use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::posrec::PosRecModel;
use crate::sessgraph::Session;

pub const DEFAULT_KS: [usize; 2] = [5, 10];

/// 1-based rank of `label` under `scores`, counting strictly higher scores
/// and equal scores of smaller ids ahead of it. `None` for labels outside
/// the score vector.
pub fn rank_of_label(scores: &[f64], label: usize) -> Option<usize> {
    let target = *scores.get(label)?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > target || (s == target && i < label))
        .count();
    Some(ahead + 1)
}

/// Recall and reciprocal-rank cut-offs over a set of test cases.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Fraction of cases ranked within the top `k`, per `k`.
    pub recall: BTreeMap<usize, f64>,
    /// Mean of `1/rank`, counting ranks beyond `k` as 0, per `k`.
    pub mrr: BTreeMap<usize, f64>,
    pub n: usize,
    /// Cases whose label lies outside the vocabulary (scored as misses).
    pub out_of_vocab: usize,
    pub manifest_hash: Option<String>,
}

impl MetricsReport {
    /// Aggregates ranks in order; `None` entries are misses.
    pub fn from_ranks(ranks: &[Option<usize>], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(invalid!("no test cases to evaluate"));
        }
        if ks.is_empty() || ks.contains(&0) {
            return Err(invalid!("cut-offs must be positive, got {ks:?}"));
        }
        let n = ranks.len() as f64;
        let mut recall = BTreeMap::new();
        let mut mrr = BTreeMap::new();
        for &k in ks {
            let mut hits = 0usize;
            let mut rr = 0.0;
            for r in ranks.iter().flatten() {
                if *r <= k {
                    hits += 1;
                    rr += 1.0 / *r as f64;
                }
            }
            recall.insert(k, hits as f64 / n);
            mrr.insert(k, rr / n);
        }
        Ok(MetricsReport {
            recall,
            mrr,
            n: ranks.len(),
            out_of_vocab: ranks.iter().filter(|r| r.is_none()).count(),
            manifest_hash: None,
        })
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.mrr.get(&k).copied()
    }

    /// Percentage with two decimals, as printed in result tables.
    pub fn pct(value: f64) -> String {
        format!("{:.2}", 100.0 * value)
    }

    pub fn summary(&self) -> String {
        let mut parts: Vec<String> = self
            .recall
            .iter()
            .map(|(k, v)| format!("R@{k}={}", Self::pct(*v)))
            .collect();
        parts.extend(self.mrr.iter().map(|(k, v)| format!("M@{k}={}", Self::pct(*v))));
        parts.push(format!("N={}", self.n));
        parts.join(" ")
    }
}

/// Ranks every test pair's label against the full item set.
///
/// Work is spread over the current rayon pool; the reduction runs over ranks
/// in input order, so the result does not depend on the thread count.
pub fn evaluate(model: &PosRecModel, pairs: &[Session], ks: &[usize]) -> Result<MetricsReport> {
    let ranks = pair_ranks(model, pairs)?;
    MetricsReport::from_ranks(&ranks, ks)
}

pub fn pair_ranks(model: &PosRecModel, pairs: &[Session]) -> Result<Vec<Option<usize>>> {
    let m = model.config().num_items;
    pairs
        .par_iter()
        .map(|p| {
            let label = p
                .label
                .ok_or_else(|| invalid!("test session `{}` has no label", p.id))?;
            if label >= m {
                log::warn!("label {label} of session `{}` is outside the vocabulary", p.id);
                return Ok(None);
            }
            let pred = model.forward_full(p)?;
            Ok(rank_of_label(&pred.scores, label))
        })
        .collect()
}
