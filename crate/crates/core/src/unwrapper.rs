//! Unwrap the ReLU classifier into exact local linear models (LLMs).
//!
//! The one-hidden-layer classifier is piecewise linear in the pooled
//! features θ: within an activation region (the set of inputs sharing one
//! ReLU on/off pattern) the pre-sigmoid score is exactly
//! `w_eff·θ + b_eff` with `w_eff = W2·diag(a)·W1` and
//! `b_eff = W2·diag(a)·b1 + b2`, where `a` is the 0/1 activation pattern.
//! This module enumerates the regions a dataset actually visits and
//! summarizes each one.

use rayon::prelude::*;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::metrics::{accuracy, auc, f1, format_metric};
use crate::model::{sigmoid, Forward, TextCnnModel};

/// ReLU on/off pattern: bit i is true iff hidden pre-activation i is
/// strictly positive (exact zeros count as inactive).
pub type ActivationPattern = Vec<bool>;

/// Derive the activation pattern from hidden pre-activations.
pub fn activation_bits(hidden_pre: &[f64]) -> ActivationPattern {
    hidden_pre.iter().map(|&u| u > 0.0).collect()
}

/// Activation pattern of a pooled feature vector θ.
pub fn activation_pattern(model: &TextCnnModel, theta: &[f64]) -> ActivationPattern {
    let k = model.classifier.w1.rows();
    (0..k)
        .map(|i| dot(model.classifier.w1.row(i), theta) + model.classifier.b1[i] > 0.0)
        .collect()
}

/// The exact linear model of one activation region.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalLinearModel {
    pub pattern: ActivationPattern,
    pub w_eff: Vec<f64>,
    pub b_eff: f64,
    /// Dataset indices of the documents that land in this region.
    pub member_ids: Vec<usize>,
}

impl LocalLinearModel {
    /// Pre-sigmoid score of this region's linear model on a θ vector.
    pub fn eta(&self, theta: &[f64]) -> f64 {
        dot(&self.w_eff, theta) + self.b_eff
    }

    /// Sigmoid score on a θ vector.
    pub fn score(&self, theta: &[f64]) -> f64 {
        sigmoid(self.eta(theta))
    }
}

/// Compute (w_eff, b_eff) for an activation pattern:
/// `w_eff = W2·diag(a)·W1`, `b_eff = W2·diag(a)·b1 + b2`.
pub fn extract_llm(model: &TextCnnModel, pattern: &[bool]) -> (Vec<f64>, f64) {
    let h = model.classifier.w1.cols();
    debug_assert_eq!(pattern.len(), model.classifier.w1.rows());
    let mut w_eff = vec![0.0; h];
    let mut b_eff = model.classifier.b2;
    for (i, &active) in pattern.iter().enumerate() {
        if active {
            let wi = model.classifier.w2[i];
            for (dst, &w1_ij) in w_eff.iter_mut().zip(model.classifier.w1.row(i)) {
                *dst += wi * w1_ij;
            }
            b_eff += wi * model.classifier.b1[i];
        }
    }
    (w_eff, b_eff)
}

/// Forward passes for a whole dataset, in document order.
pub fn forward_dataset(model: &TextCnnModel, ds: &Dataset) -> Result<Vec<Forward>> {
    ds.documents
        .par_iter()
        .map(|doc| model.forward(&doc.ids))
        .collect()
}

/// Group a dataset's documents by activation pattern and extract each
/// region's LLM. Regions come back ordered by descending member count,
/// ties broken by pattern bits lexicographically (false < true).
pub fn enumerate_regions(model: &TextCnnModel, ds: &Dataset) -> Result<Vec<LocalLinearModel>> {
    let forwards = forward_dataset(model, ds)?;
    Ok(enumerate_regions_from_forwards(model, &forwards))
}

/// As [`enumerate_regions`], reusing precomputed forward passes.
pub fn enumerate_regions_from_forwards(
    model: &TextCnnModel,
    forwards: &[Forward],
) -> Vec<LocalLinearModel> {
    let mut groups: std::collections::HashMap<ActivationPattern, Vec<usize>> =
        std::collections::HashMap::new();
    for (idx, f) in forwards.iter().enumerate() {
        groups
            .entry(activation_bits(&f.hidden_pre))
            .or_default()
            .push(idx);
    }
    let mut regions: Vec<LocalLinearModel> = groups
        .into_iter()
        .map(|(pattern, member_ids)| {
            let (w_eff, b_eff) = extract_llm(model, &pattern);
            LocalLinearModel {
                pattern,
                w_eff,
                b_eff,
                member_ids,
            }
        })
        .collect();
    for region in &mut regions {
        region.member_ids.sort_unstable();
    }
    regions.sort_by(|a, b| {
        b.member_ids
            .len()
            .cmp(&a.member_ids.len())
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    regions
}

/// Count of distinct (w_eff, b_eff) among regions after rounding each
/// coefficient to 1e-8. L1 on W2 can zero hidden units, making distinct
/// activation patterns coefficient-equivalent; this is the number that
/// merging effectively acts on.
pub fn effective_region_count(regions: &[LocalLinearModel]) -> usize {
    let round = |x: f64| (x * 1e8).round() as i64;
    let mut keys: Vec<Vec<i64>> = regions
        .iter()
        .map(|r| {
            let mut key: Vec<i64> = r.w_eff.iter().map(|&w| round(w)).collect();
            key.push(round(r.b_eff));
            key
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Table-shaped summary of one region.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RegionStats {
    pub count: usize,
    /// Mean and population standard deviation of member labels.
    pub response_mean: f64,
    pub response_std: f64,
    pub local_accuracy: f64,
    pub local_auc: Option<f64>,
    pub local_f1: f64,
    pub global_accuracy: f64,
    pub global_auc: Option<f64>,
    pub global_f1: f64,
}

/// Compute region statistics. Local metrics evaluate the region's LLM on
/// its own members; global metrics apply the same LLM to every document.
/// `thetas` must hold the pooled features of the full dataset, and
/// `labels` the full label vector, both in document order.
pub fn region_stats(
    llm: &LocalLinearModel,
    thetas: &[Vec<f64>],
    labels: &[u8],
) -> Result<RegionStats> {
    if llm.member_ids.is_empty() {
        return Err(Error::Empty("region has no members"));
    }
    let n = llm.member_ids.len() as f64;
    let member_labels: Vec<u8> = llm.member_ids.iter().map(|&i| labels[i]).collect();
    let mean = member_labels.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = member_labels
        .iter()
        .map(|&l| (l as f64 - mean).powi(2))
        .sum::<f64>()
        / n;

    let member_scores: Vec<f64> = llm
        .member_ids
        .iter()
        .map(|&i| llm.score(&thetas[i]))
        .collect();
    let global_scores: Vec<f64> = thetas.iter().map(|t| llm.score(t)).collect();

    Ok(RegionStats {
        count: llm.member_ids.len(),
        response_mean: mean,
        response_std: var.sqrt(),
        local_accuracy: accuracy(&member_scores, &member_labels, 0.5)?,
        local_auc: auc(&member_scores, &member_labels),
        local_f1: f1(&member_scores, &member_labels, 0.5)?,
        global_accuracy: accuracy(&global_scores, labels, 0.5)?,
        global_auc: auc(&global_scores, labels),
        global_f1: f1(&global_scores, labels, 0.5)?,
    })
}

/// Render regions as the region-table CSV (one row per region, ordered as
/// enumerated; region ids are 1-based).
pub fn region_table_csv(
    regions: &[LocalLinearModel],
    thetas: &[Vec<f64>],
    labels: &[u8],
) -> Result<String> {
    let mut out = String::from(
        "region_id,count,response_mean,response_std,local_auc,global_auc,\
         local_accuracy,global_accuracy,local_f1,global_f1\n",
    );
    for (idx, region) in regions.iter().enumerate() {
        let s = region_stats(region, thetas, labels)?;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            idx + 1,
            s.count,
            s.response_mean,
            s.response_std,
            format_metric(s.local_auc),
            format_metric(s.global_auc),
            s.local_accuracy,
            s.global_accuracy,
            s.local_f1,
            s.global_f1,
        ));
    }
    Ok(out)
}
