//! The convolutional text classifier: embedding lookup, per-width
//! convolution, max-pooling with argmax tracking, and a one-hidden-layer
//! ReLU classifier ending in a sigmoid score.
//!
//! The pooled feature vector θ has one entry per filter and is always
//! nonnegative because zero competes in the max-pool. When every window
//! value is negative the filter selects *no* n-gram and its argmax window
//! is `None`; downstream reports must render that case.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Architecture hyperparameters. The filter widths are fixed at
/// `[1, 2, 3]` (uni-, bi-, and tri-gram features); the total filter count
/// is therefore `3 * filters_per_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub filters_per_width: usize,
    pub filter_widths: Vec<usize>,
    pub hidden_units: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 8,
            filters_per_width: 10,
            filter_widths: vec![1, 2, 3],
            hidden_units: 10,
            max_len: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 {
            return Err(Error::Config("embed_dim must be >= 1".into()));
        }
        if self.filters_per_width < 1 {
            return Err(Error::Config("filters_per_width must be >= 1".into()));
        }
        if self.hidden_units < 1 {
            return Err(Error::Config("hidden_units must be >= 1".into()));
        }
        if self.filter_widths != [1, 2, 3] {
            return Err(Error::Config(format!(
                "filter_widths must be [1, 2, 3], got {:?}",
                self.filter_widths
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config(
                "max_len must be >= 3 so every filter width fits".into(),
            ));
        }
        Ok(())
    }

    /// Total filter count h = widths × filters_per_width.
    pub fn total_filters(&self) -> usize {
        self.filter_widths.len() * self.filters_per_width
    }
}

/// One convolution filter: `width × embed_dim` weights (row-major) and a bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvFilter {
    pub width: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// The two-linear-layer ReLU classifier on top of pooled features.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierMlp {
    /// `hidden_units × h`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// The single row of the `1 × hidden_units` output layer.
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Max-pooled features: θ plus, per filter, the window that attained the
/// max (`None` when the zero candidate beat every window).
#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeatures {
    pub theta: Vec<f64>,
    pub argmax_window: Vec<Option<usize>>,
}

/// Everything the forward pass computes for one document.
#[derive(Clone, Debug)]
pub struct Forward {
    pub pooled: PooledFeatures,
    /// Hidden pre-activations `W1·θ + b1`.
    pub hidden_pre: Vec<f64>,
    /// Hidden post-activations `max(0, hidden_pre)`.
    pub hidden: Vec<f64>,
    /// Pre-sigmoid score.
    pub eta: f64,
}

impl Forward {
    pub fn score(&self) -> f64 {
        sigmoid(self.eta)
    }
}

/// The full model. Filters are stored grouped by width: all width-1
/// filters first, then width-2, then width-3.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCnnModel {
    pub config: ModelConfig,
    /// `vocab_size × embed_dim`; row 0 (`<PAD>`) is all zeros and is never
    /// updated by training.
    pub embedding: Matrix,
    pub filters: Vec<ConvFilter>,
    pub classifier: ClassifierMlp,
}

impl TextCnnModel {
    /// Deterministically initialize under `config.seed`. Embedding rows
    /// other than `<PAD>` are uniform in [-0.25, 0.25]; filter and
    /// classifier weights are uniform in [-s, s] with
    /// s = sqrt(6 / (fan_in + fan_out)); all biases start at zero.
    pub fn init(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be >= 2 (got {vocab_size})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let m = config.embed_dim;
        let k = config.hidden_units;
        let h = config.total_filters();

        let mut embedding = Matrix::zeros(vocab_size, m);
        for row in 1..vocab_size {
            for entry in embedding.row_mut(row) {
                *entry = rng.random_range(-0.25..0.25);
            }
        }

        let mut filters = Vec::with_capacity(h);
        for &width in &config.filter_widths {
            let fan_in = width * m;
            let s = (6.0 / (fan_in as f64 + 1.0)).sqrt();
            for _ in 0..config.filters_per_width {
                let weights = (0..width * m).map(|_| rng.random_range(-s..s)).collect();
                filters.push(ConvFilter {
                    width,
                    weights,
                    bias: 0.0,
                });
            }
        }

        let s1 = (6.0 / (h as f64 + k as f64)).sqrt();
        let mut w1 = Matrix::zeros(k, h);
        for entry in w1.data_mut() {
            *entry = rng.random_range(-s1..s1);
        }
        let s2 = (6.0 / (k as f64 + 1.0)).sqrt();
        let w2 = (0..k).map(|_| rng.random_range(-s2..s2)).collect();

        Ok(TextCnnModel {
            config,
            embedding,
            filters,
            classifier: ClassifierMlp {
                w1,
                b1: vec![0.0; k],
                w2,
                b2: 0.0,
            },
        })
    }

    /// Total filter count h.
    pub fn h(&self) -> usize {
        self.filters.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// Run the full forward pass on one encoded document.
    pub fn forward(&self, ids: &[u32]) -> Result<Forward> {
        if ids.len() != self.config.max_len {
            return Err(Error::Dimension(format!(
                "expected {} ids, got {}",
                self.config.max_len,
                ids.len()
            )));
        }
        let emb = embed(ids, &self.embedding)?;
        let mut theta = Vec::with_capacity(self.filters.len());
        let mut argmax_window = Vec::with_capacity(self.filters.len());
        for filter in &self.filters {
            let values = convolve(filter, &emb)?;
            let (t, window) = max_pool(&values);
            theta.push(t);
            argmax_window.push(window);
        }

        let k = self.classifier.w1.rows();
        let mut hidden_pre = Vec::with_capacity(k);
        for i in 0..k {
            hidden_pre.push(dot(self.classifier.w1.row(i), &theta) + self.classifier.b1[i]);
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&u| u.max(0.0)).collect();
        let eta = dot(&self.classifier.w2, &hidden) + self.classifier.b2;

        Ok(Forward {
            pooled: PooledFeatures {
                theta,
                argmax_window,
            },
            hidden_pre,
            hidden,
            eta,
        })
    }

    /// Sigmoid score for one document.
    pub fn score(&self, ids: &[u32]) -> Result<f64> {
        Ok(self.forward(ids)?.score())
    }
}

/// Look up embedding rows for an id sequence: row t of the result is the
/// embedding row of `ids[t]`.
pub fn embed(ids: &[u32], table: &Matrix) -> Result<Matrix> {
    let m = table.cols();
    let mut out = Matrix::zeros(ids.len(), m);
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= table.rows() {
            return Err(Error::IdOutOfRange {
                id: id as u32,
                vocab_size: table.rows(),
            });
        }
        out.row_mut(t).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Slide a filter over the embedded document: entry k is the Frobenius
/// inner product of the filter weights with embedding rows k..k+width-1,
/// plus the filter bias.
pub fn convolve(filter: &ConvFilter, emb: &Matrix) -> Result<Vec<f64>> {
    let l = emb.rows();
    let m = emb.cols();
    let n = filter.width;
    if l < n {
        return Err(Error::Dimension(format!(
            "document length {l} shorter than filter width {n}"
        )));
    }
    debug_assert_eq!(filter.weights.len(), n * m);
    let mut out = Vec::with_capacity(l - n + 1);
    for start in 0..=l - n {
        out.push(conv_window(filter, emb, start));
    }
    Ok(out)
}

/// Convolution value of a single window: the exact arithmetic used by
/// [`convolve`] for the window at `start`, exposed so attributions can
/// re-derive a pooled value bit-for-bit.
pub fn conv_window(filter: &ConvFilter, emb: &Matrix, start: usize) -> f64 {
    let m = emb.cols();
    let mut acc = filter.bias;
    for offset in 0..filter.width {
        acc += dot(
            &filter.weights[offset * m..(offset + 1) * m],
            emb.row(start + offset),
        );
    }
    acc
}

/// Max over window values with zero as an extra candidate. Returns the
/// pooled value and the earliest window index attaining the max, or `None`
/// when every window value is negative (the zero candidate won outright).
pub fn max_pool(values: &[f64]) -> (f64, Option<usize>) {
    assert!(!values.is_empty(), "max_pool on empty window values");
    let mut best = values[0];
    let mut best_idx = 0;
    for (idx, &v) in values.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            best_idx = idx;
        }
    }
    if best < 0.0 {
        (0.0, None)
    } else {
        (best, Some(best_idx))
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
