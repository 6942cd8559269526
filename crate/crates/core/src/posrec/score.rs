use crate::error::{invalid, Result};
use crate::numcore::{softmax_row, Tensor, LOG_CLAMP};

/// Next-item distribution with the full ranking of items.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    /// Item ids by descending score; ties go to the smaller id.
    pub top_k: Vec<usize>,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let top_k = rank_items(&scores);
        Prediction { scores, top_k }
    }

    /// 1-based rank of `item`, `None` when out of range.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.top_k.iter().position(|&i| i == item).map(|p| p + 1)
    }
}

/// Item ids sorted by descending score, ties by ascending id.
pub fn rank_items(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `softmax(X hᵀ)` over the item table.
pub fn score(h: &[f64], item_embeddings: &Tensor) -> Result<Prediction> {
    let d = item_embeddings.cols();
    if item_embeddings.shape().len() != 2 || h.len() != d {
        return Err(invalid!(
            "h has width {}, item table has shape {:?}",
            h.len(),
            item_embeddings.shape()
        ));
    }
    let logits: Vec<f64> = (0..item_embeddings.rows())
        .map(|r| item_embeddings.row(r).iter().zip(h).map(|(x, y)| x * y).sum())
        .collect();
    Ok(Prediction::from_scores(softmax_row(&logits).collect()))
}

/// Cross-entropy summed over the batch, with probabilities clamped at
/// `LOG_CLAMP` before the logarithm.
pub fn loss(predictions: &[Prediction], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(invalid!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        ));
    }
    predictions
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let prob = p
                .scores
                .get(y)
                .ok_or_else(|| invalid!("label {y} outside a vocabulary of {}", p.scores.len()))?;
            Ok(-prob.max(LOG_CLAMP).ln())
        })
        .sum()
}
