//! Binary classification metrics: accuracy, rank-based AUC, and F1.
//!
//! AUC follows the Mann–Whitney formulation with average ranks, so tied
//! scores receive half credit. When only one class is present the AUC is
//! undefined and reported as `None` (rendered "N/A" in tables).

use crate::error::{Error, Result};

/// Fraction of documents where `(score >= threshold)` matches the label.
/// A score exactly at the threshold counts as a positive prediction.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Empty("accuracy needs at least one sample"));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|&(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Mann–Whitney AUC with average ranks for ties; `None` when the input
/// contains only one class (including the empty input).
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of average ranks over positives. Ranks are multiples of 0.5, so
    // the accumulation below is exact in f64 at any realistic size.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &t in &order[i..=j] {
            if labels[t] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// F1 = 2·TP / (2·TP + FP + FN), defined as 0 when the denominator is 0
/// (no predicted and no actual positives).
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Empty("f1 needs at least one sample"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        Ok(0.0)
    } else {
        Ok(2.0 * tp as f64 / denom as f64)
    }
}

/// Render an optional metric for tables: six decimals, or "N/A" when the
/// metric is undefined.
pub fn format_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "N/A".to_string(),
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}
