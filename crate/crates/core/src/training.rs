//! End-to-end training: binary cross-entropy with exact backpropagation
//! through the sigmoid head, the ReLU classifier, max-pooling (gradients
//! route only to each filter's argmax window), the convolutions, and the
//! embedding table. Also hosts the two sweep experiments and λ selection.
//!
//! L1 regularization is normalized by the element count of the penalized
//! matrix so λ values stay comparable across architectures. The reported
//! loss and gradients include the L1 term; the optimizer applies it as a
//! proximal soft-threshold after each Adam step on the data gradients,
//! which is what makes penalized weights reach *exact* zeros.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenizedDocument};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{accuracy, auc, format_metric};
use crate::model::{embed, sigmoid, Forward, ModelConfig, TextCnnModel};
use crate::unwrapper::{
    activation_bits, effective_region_count, enumerate_regions_from_forwards, forward_dataset,
};

/// Which weight matrix the L1 penalty applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Placement {
    /// Penalize W1 (pooled features → hidden units).
    InputToHidden,
    /// Penalize W2 (hidden units → output); the default.
    HiddenToOutput,
    None,
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L1 strength; the penalty is λ·Σ|w| / element-count of the placement
    /// matrix.
    pub lambda: f64,
    pub l1_placement: L1Placement,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            lambda: 0.0,
            l1_placement: L1Placement::HiddenToOutput,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Gradients for every trainable tensor, in the model's own shapes. The
/// embedding gradient includes the true gradient of row 0 (`<PAD>`); the
/// optimizer simply never applies it, keeping that row frozen at zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub embedding: Matrix,
    pub filter_weights: Vec<Vec<f64>>,
    pub filter_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    fn zeros(model: &TextCnnModel) -> Self {
        Gradients {
            embedding: Matrix::zeros(model.embedding.rows(), model.embedding.cols()),
            filter_weights: model
                .filters
                .iter()
                .map(|f| vec![0.0; f.weights.len()])
                .collect(),
            filter_bias: vec![0.0; model.filters.len()],
            w1: Matrix::zeros(model.classifier.w1.rows(), model.classifier.w1.cols()),
            b1: vec![0.0; model.classifier.b1.len()],
            w2: vec![0.0; model.classifier.w2.len()],
            b2: 0.0,
        }
    }
}

/// Numerically stable binary cross-entropy of a pre-sigmoid score.
fn bce(eta: f64, label: u8) -> f64 {
    let y = label as f64;
    eta.max(0.0) - eta * y + (-eta.abs()).exp().ln_1p()
}

fn l1_subgradient(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The L1 penalty term of the objective at the model's current weights.
pub fn l1_term(model: &TextCnnModel, lambda: f64, placement: L1Placement) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (sum, count) = match placement {
        L1Placement::InputToHidden => {
            let d = model.classifier.w1.data();
            (d.iter().map(|w| w.abs()).sum::<f64>(), d.len())
        }
        L1Placement::HiddenToOutput => {
            let d = &model.classifier.w2;
            (d.iter().map(|w| w.abs()).sum::<f64>(), d.len())
        }
        L1Placement::None => return 0.0,
    };
    lambda * sum / count as f64
}

/// Mean BCE over the batch plus the normalized L1 term, with exact
/// gradients for every trainable parameter (L1 enters as a sign
/// subgradient, 0 at 0).
pub fn loss_and_gradients(
    model: &TextCnnModel,
    batch: &[&TokenizedDocument],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let (mut loss, mut grads) = data_loss_and_gradients(model, batch)?;
    loss += l1_term(model, cfg.lambda, cfg.l1_placement);
    if cfg.lambda > 0.0 {
        match cfg.l1_placement {
            L1Placement::InputToHidden => {
                let count = grads.w1.data().len() as f64;
                for (g, &w) in grads
                    .w1
                    .data_mut()
                    .iter_mut()
                    .zip(model.classifier.w1.data())
                {
                    *g += cfg.lambda * l1_subgradient(w) / count;
                }
            }
            L1Placement::HiddenToOutput => {
                let count = grads.w2.len() as f64;
                for (g, &w) in grads.w2.iter_mut().zip(&model.classifier.w2) {
                    *g += cfg.lambda * l1_subgradient(w) / count;
                }
            }
            L1Placement::None => {}
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, grads))
}

/// BCE loss and gradients without any regularization term.
fn data_loss_and_gradients(
    model: &TextCnnModel,
    batch: &[&TokenizedDocument],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch is empty"));
    }
    let forwards: Vec<Forward> = batch
        .par_iter()
        .map(|doc| model.forward(&doc.ids))
        .collect::<Result<_>>()?;

    let b = batch.len() as f64;
    let m = model.config.embed_dim;
    let k = model.classifier.w1.rows();
    let h = model.h();
    let mut grads = Gradients::zeros(model);
    let mut loss = 0.0;

    for (doc, f) in batch.iter().zip(&forwards) {
        loss += bce(f.eta, doc.label) / b;
        let d_eta = (sigmoid(f.eta) - doc.label as f64) / b;

        // Output layer.
        for i in 0..k {
            grads.w2[i] += d_eta * f.hidden[i];
        }
        grads.b2 += d_eta;

        // Hidden layer through the ReLU subgradient (0 at exactly 0).
        let mut d_theta = vec![0.0; h];
        for i in 0..k {
            if f.hidden_pre[i] > 0.0 {
                let du = d_eta * model.classifier.w2[i];
                grads.b1[i] += du;
                let w1_row = model.classifier.w1.row(i);
                let g1_row = grads.w1.row_mut(i);
                for j in 0..h {
                    g1_row[j] += du * f.pooled.theta[j];
                    d_theta[j] += du * w1_row[j];
                }
            }
        }

        // Max-pool routes each dθ_j only to the argmax window; filters whose
        // zero candidate won receive nothing.
        let x = embed(&doc.ids, &model.embedding)?;
        for (j, filter) in model.filters.iter().enumerate() {
            let Some(pos) = f.pooled.argmax_window[j] else {
                continue;
            };
            let g = d_theta[j];
            if g == 0.0 {
                continue;
            }
            grads.filter_bias[j] += g;
            let gw = &mut grads.filter_weights[j];
            for offset in 0..filter.width {
                let row = x.row(pos + offset);
                let emb_row = grads.embedding.row_mut(doc.ids[pos + offset] as usize);
                for dim in 0..m {
                    gw[offset * m + dim] += g * row[dim];
                    emb_row[dim] += g * filter.weights[offset * m + dim];
                }
            }
        }
    }
    Ok((loss, grads))
}

/// One epoch's record in the training history.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Epoch mean of batch losses (BCE + L1 term at pre-update weights).
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_auc: Option<f64>,
    /// Distinct activation patterns observed on the validation set.
    pub region_count: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot was returned (best validation accuracy,
    /// earliest on ties).
    pub best_epoch: usize,
}

/// Render the history as CSV, one row per epoch.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy,val_auc,region_count\n");
    for r in &history.records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            r.epoch,
            r.train_loss,
            r.val_accuracy,
            format_metric(r.val_auc),
            r.region_count
        ));
    }
    out
}

/// Adam first/second-moment state for one tensor.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One Adam update with bias correction at step `t` (1-based).
    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64, t: usize) {
        debug_assert_eq!(w.len(), self.m.len());
        debug_assert_eq!(w.len(), g.len());
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..w.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// In-place soft-threshold: w ← sign(w)·max(|w| − t, 0).
fn soft_threshold(w: &mut [f64], t: f64) {
    for x in w.iter_mut() {
        let shrunk = x.abs() - t;
        *x = if shrunk > 0.0 {
            x.signum() * shrunk
        } else {
            0.0
        };
    }
}

/// Train with minibatch Adam under a deterministic batch order, returning
/// the epoch snapshot with the best validation accuracy plus the per-epoch
/// history. When λ > 0, each Adam step on the data gradients is followed
/// by a proximal soft-threshold of the placement matrix with step
/// `learning_rate·λ / element-count`, driving penalized weights to exact
/// zeros.
pub fn fit(
    model: &TextCnnModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TextCnnModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }

    let mut model = model.clone();
    let m = model.config.embed_dim;
    let emb_len = model.embedding.data().len();
    let mut adam_emb = Adam::new(emb_len - m); // row 0 (<PAD>) stays frozen
    let mut adam_fw: Vec<Adam> = model
        .filters
        .iter()
        .map(|f| Adam::new(f.weights.len()))
        .collect();
    let mut adam_fb = Adam::new(model.filters.len());
    let mut adam_w1 = Adam::new(model.classifier.w1.data().len());
    let mut adam_b1 = Adam::new(model.classifier.b1.len());
    let mut adam_w2 = Adam::new(model.classifier.w2.len());
    let mut adam_b2 = Adam::new(1);

    let prox = match cfg.l1_placement {
        _ if cfg.lambda == 0.0 => None,
        L1Placement::InputToHidden => {
            Some(cfg.learning_rate * cfg.lambda / model.classifier.w1.data().len() as f64)
        }
        L1Placement::HiddenToOutput => {
            Some(cfg.learning_rate * cfg.lambda / model.classifier.w2.len() as f64)
        }
        L1Placement::None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, TextCnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        let mut indices: Vec<usize> = (0..train.len()).collect();
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<&TokenizedDocument> =
                chunk.iter().map(|&i| &train.documents[i]).collect();
            let (data_loss, grads) = data_loss_and_gradients(&model, &batch)?;
            let loss = data_loss + l1_term(&model, cfg.lambda, cfg.l1_placement);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss;
            batches += 1;
            step += 1;

            let lr = cfg.learning_rate;
            adam_emb.step(
                &mut model.embedding.data_mut()[m..],
                &grads.embedding.data()[m..],
                lr,
                step,
            );
            for ((filter, state), g) in model
                .filters
                .iter_mut()
                .zip(&mut adam_fw)
                .zip(&grads.filter_weights)
            {
                state.step(&mut filter.weights, g, lr, step);
            }
            let mut biases: Vec<f64> = model.filters.iter().map(|f| f.bias).collect();
            adam_fb.step(&mut biases, &grads.filter_bias, lr, step);
            for (filter, &b) in model.filters.iter_mut().zip(&biases) {
                filter.bias = b;
            }
            adam_w1.step(model.classifier.w1.data_mut(), grads.w1.data(), lr, step);
            adam_b1.step(&mut model.classifier.b1, &grads.b1, lr, step);
            adam_w2.step(&mut model.classifier.w2, &grads.w2, lr, step);
            let mut b2 = [model.classifier.b2];
            adam_b2.step(&mut b2, &[grads.b2], lr, step);
            model.classifier.b2 = b2[0];

            if let Some(t) = prox {
                match cfg.l1_placement {
                    L1Placement::InputToHidden => soft_threshold(model.classifier.w1.data_mut(), t),
                    L1Placement::HiddenToOutput => soft_threshold(&mut model.classifier.w2, t),
                    L1Placement::None => {}
                }
            }
        }

        let forwards = forward_dataset(&model, val)?;
        let scores: Vec<f64> = forwards.iter().map(Forward::score).collect();
        let labels = val.labels();
        let val_accuracy = accuracy(&scores, &labels, 0.5)?;
        let val_auc = auc(&scores, &labels);
        let mut patterns: Vec<Vec<bool>> = forwards
            .iter()
            .map(|f| activation_bits(&f.hidden_pre))
            .collect();
        patterns.sort_unstable();
        patterns.dedup();

        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
            val_auc,
            region_count: patterns.len(),
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
    }

    let (_, best_epoch, best_model) = best.expect("epochs >= 1 guarantees a snapshot");
    Ok((
        best_model,
        TrainHistory {
            records: history,
            best_epoch,
        },
    ))
}

/// One grid cell of a sweep. Region counts are measured on the test set:
/// `region_count` is the number of distinct activation patterns and
/// `effective_region_count` the number of distinct (w_eff, b_eff) after
/// rounding to 1e-8.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub n_f: usize,
    pub n_h: usize,
    pub lambda: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub test_auc: Option<f64>,
    pub region_count: usize,
    pub effective_region_count: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

/// Render a sweep as CSV, one row per cell in grid order.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(
        "n_f,n_h,lambda,val_accuracy,test_accuracy,test_auc,region_count,effective_region_count\n",
    );
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{},{}\n",
            c.n_f,
            c.n_h,
            c.lambda,
            c.val_accuracy,
            c.test_accuracy,
            format_metric(c.test_auc),
            c.region_count,
            c.effective_region_count
        ));
    }
    out
}

fn run_cell(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab_size: usize,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<SweepCell> {
    let model = TextCnnModel::init(model_cfg.clone(), vocab_size)?;
    let (trained, history) = fit(&model, train, val, train_cfg)?;
    let val_accuracy = history.records[history.best_epoch - 1].val_accuracy;

    let forwards = forward_dataset(&trained, test)?;
    let scores: Vec<f64> = forwards.iter().map(Forward::score).collect();
    let labels = test.labels();
    let regions = enumerate_regions_from_forwards(&trained, &forwards);
    Ok(SweepCell {
        n_f: model_cfg.filters_per_width,
        n_h: model_cfg.hidden_units,
        lambda: train_cfg.lambda,
        val_accuracy,
        test_accuracy: accuracy(&scores, &labels, 0.5)?,
        test_auc: auc(&scores, &labels),
        region_count: regions.len(),
        effective_region_count: effective_region_count(&regions),
    })
}

/// Train one model per (n_f, n_h) grid point and record test metrics and
/// region counts for each.
#[allow(clippy::too_many_arguments)]
pub fn sweep_complexity(
    nf_values: &[usize],
    nh_values: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab_size: usize,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<SweepResult> {
    if nf_values.is_empty() || nh_values.is_empty() {
        return Err(Error::Empty("sweep grid is empty"));
    }
    let mut cells = Vec::with_capacity(nf_values.len() * nh_values.len());
    for &n_f in nf_values {
        for &n_h in nh_values {
            let cell_cfg = ModelConfig {
                filters_per_width: n_f,
                hidden_units: n_h,
                ..model_cfg.clone()
            };
            let cell =
                run_cell(&cell_cfg, train_cfg, vocab_size, train, val, test).map_err(|e| {
                    Error::Sweep {
                        cell: format!("n_f={n_f}, n_h={n_h}"),
                        source: Box::new(e),
                    }
                })?;
            cells.push(cell);
        }
    }
    Ok(SweepResult { cells })
}

/// Train one model per λ value (ascending) at a fixed placement and record
/// test metrics and region counts for each.
#[allow(clippy::too_many_arguments)]
pub fn sweep_lambda(
    lambda_values: &[f64],
    placement: L1Placement,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab_size: usize,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<SweepResult> {
    if lambda_values.is_empty() {
        return Err(Error::Empty("lambda grid is empty"));
    }
    for pair in lambda_values.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::Config(format!(
                "lambda values must be sorted ascending, got {} before {}",
                pair[0], pair[1]
            )));
        }
    }
    if lambda_values.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::Config("lambda values must be nonnegative".into()));
    }
    let mut cells = Vec::with_capacity(lambda_values.len());
    for &lambda in lambda_values {
        let cell_cfg = TrainConfig {
            lambda,
            l1_placement: placement,
            ..train_cfg.clone()
        };
        let cell = run_cell(model_cfg, &cell_cfg, vocab_size, train, val, test).map_err(|e| {
            Error::Sweep {
                cell: format!("lambda={lambda}"),
                source: Box::new(e),
            }
        })?;
        cells.push(cell);
    }
    Ok(SweepResult { cells })
}

/// Pick λ per the selection rule: among cells with
/// `region_count < max_regions`, the one with the highest validation
/// accuracy (ties → larger λ). If no cell qualifies, fall back to the cell
/// with the smallest region count (ties → larger λ).
pub fn select_lambda(sweep: &SweepResult, max_regions: usize) -> Result<f64> {
    if sweep.cells.is_empty() {
        return Err(Error::Empty("sweep has no cells"));
    }
    let qualifying: Vec<&SweepCell> = sweep
        .cells
        .iter()
        .filter(|c| c.region_count < max_regions)
        .collect();
    let pick = |cells: &[&SweepCell], better: &dyn Fn(&SweepCell, &SweepCell) -> bool| -> f64 {
        let mut best = cells[0];
        for &c in &cells[1..] {
            if better(c, best) {
                best = c;
            }
        }
        best.lambda
    };
    if !qualifying.is_empty() {
        Ok(pick(&qualifying, &|c, best| {
            c.val_accuracy > best.val_accuracy
                || (c.val_accuracy == best.val_accuracy && c.lambda > best.lambda)
        }))
    } else {
        let all: Vec<&SweepCell> = sweep.cells.iter().collect();
        Ok(pick(&all, &|c, best| {
            c.region_count < best.region_count
                || (c.region_count == best.region_count && c.lambda > best.lambda)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, split_dataset, Dataset};
    use crate::synth::{generate_sentiment_corpus, SynthConfig};

    fn synth_splits(num_docs: usize, seed: u64, max_len: usize) -> (Dataset, Dataset, usize) {
        let records = generate_sentiment_corpus(&SynthConfig {
            num_docs,
            seed,
            ..SynthConfig::default()
        });
        let vocab = build_vocabulary(records.iter().map(|r| r.tokens.as_slice()), 1);
        let ds = Dataset::encode(&records, &vocab, max_len);
        let (train, val) = split_dataset(&ds, 0.8, seed).unwrap();
        (train, val, vocab.size())
    }

    fn tiny_model(vocab_size: usize, seed: u64) -> TextCnnModel {
        TextCnnModel::init(
            ModelConfig {
                embed_dim: 3,
                filters_per_width: 2,
                filter_widths: vec![1, 2, 3],
                hidden_units: 3,
                max_len: 6,
                seed,
            },
            vocab_size,
        )
        .unwrap()
    }

    fn tiny_batch(vocab_size: u32) -> Vec<TokenizedDocument> {
        (0..4usize)
            .map(|i| TokenizedDocument {
                ids: (0..6u32)
                    .map(|t| (i as u32 * 5 + t * 3 + 1) % vocab_size)
                    .collect(),
                tokens: vec![],
                label: (i % 2) as u8,
            })
            .collect()
    }

    /// Central finite differences over every parameter of the model.
    fn finite_difference_check(cfg: &TrainConfig) {
        let model = tiny_model(7, 2024);
        let docs = tiny_batch(7);
        let batch: Vec<&TokenizedDocument> = docs.iter().collect();
        let (_, grads) = loss_and_gradients(&model, &batch, cfg).unwrap();

        let eps = 1e-5;
        let mut checked = 0usize;
        let mut check = |analytic: f64, perturb: &dyn Fn(&mut TextCnnModel, f64)| {
            let mut plus = model.clone();
            perturb(&mut plus, eps);
            let mut minus = model.clone();
            perturb(&mut minus, -eps);
            let (lp, _) = loss_and_gradients(&plus, &batch, cfg).unwrap();
            let (lm, _) = loss_and_gradients(&minus, &batch, cfg).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            if analytic.abs() < 1e-8 {
                assert!(
                    (analytic - fd).abs() < 1e-7,
                    "near-zero: {analytic} vs {fd}"
                );
            } else {
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
                assert!(
                    rel < 1e-4 || (analytic - fd).abs() < 1e-7,
                    "analytic {analytic} vs fd {fd} (rel {rel})"
                );
            }
            checked += 1;
        };

        let (rows, cols) = (model.embedding.rows(), model.embedding.cols());
        for r in 0..rows {
            for c in 0..cols {
                check(grads.embedding.get(r, c), &move |m, d| {
                    let v = m.embedding.get(r, c);
                    m.embedding.set(r, c, v + d);
                });
            }
        }
        for j in 0..model.filters.len() {
            for i in 0..model.filters[j].weights.len() {
                check(grads.filter_weights[j][i], &move |m, d| {
                    m.filters[j].weights[i] += d
                });
            }
            check(grads.filter_bias[j], &move |m, d| m.filters[j].bias += d);
        }
        for r in 0..model.classifier.w1.rows() {
            for c in 0..model.classifier.w1.cols() {
                check(grads.w1.get(r, c), &move |m, d| {
                    let v = m.classifier.w1.get(r, c);
                    m.classifier.w1.set(r, c, v + d);
                });
            }
        }
        for i in 0..model.classifier.b1.len() {
            check(grads.b1[i], &move |m, d| m.classifier.b1[i] += d);
        }
        for i in 0..model.classifier.w2.len() {
            check(grads.w2[i], &move |m, d| m.classifier.w2[i] += d);
        }
        check(grads.b2, &|m, d| m.classifier.b2 += d);
        assert!(checked > 50, "checked only {checked} parameters");
    }

    #[test]
    fn gradients_match_finite_differences_unregularized() {
        finite_difference_check(&TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        });
    }

    #[test]
    fn gradients_match_finite_differences_with_l1() {
        finite_difference_check(&TrainConfig {
            lambda: 0.1,
            l1_placement: L1Placement::HiddenToOutput,
            ..TrainConfig::default()
        });
    }

    #[test]
    fn zero_eta_positive_label_gradient() {
        // All-zero classifier and filters force eta = 0; with label 1 the
        // mean dL/deta is sigmoid(0) - 1 = -0.5, visible in b2's gradient.
        let mut model = tiny_model(5, 3);
        for f in &mut model.filters {
            f.weights.iter_mut().for_each(|w| *w = 0.0);
            f.bias = 0.0;
        }
        model.classifier.w1 = Matrix::zeros(3, 6);
        model.classifier.b1 = vec![0.0; 3];
        model.classifier.w2 = vec![0.0; 3];
        model.classifier.b2 = 0.0;
        let doc = TokenizedDocument {
            ids: vec![1, 2, 3, 4, 1, 2],
            tokens: vec![],
            label: 1,
        };
        let (loss, grads) = loss_and_gradients(&model, &[&doc], &TrainConfig::default()).unwrap();
        assert_eq!(grads.b2, -0.5);
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_placement_matrix_contributes_nothing() {
        let mut model = tiny_model(5, 4);
        model.classifier.w2 = vec![0.0; 3];
        let docs = tiny_batch(5);
        let batch: Vec<&TokenizedDocument> = docs.iter().collect();
        let cfg0 = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let cfg5 = TrainConfig {
            lambda: 5.0,
            l1_placement: L1Placement::HiddenToOutput,
            ..TrainConfig::default()
        };
        let (l0, g0) = loss_and_gradients(&model, &batch, &cfg0).unwrap();
        let (l5, g5) = loss_and_gradients(&model, &batch, &cfg5).unwrap();
        assert_eq!(l0, l5);
        assert_eq!(g0.w2, g5.w2);
    }

    #[test]
    fn pad_row_gradient_is_reported_but_never_applied() {
        let (train, val, vocab_size) = synth_splits(40, 5, 8);
        let model = TextCnnModel::init(
            ModelConfig {
                embed_dim: 4,
                filters_per_width: 2,
                filter_widths: vec![1, 2, 3],
                hidden_units: 4,
                max_len: 8,
                seed: 5,
            },
            vocab_size,
        )
        .unwrap();
        let (trained, _) = fit(
            &model,
            &train,
            &val,
            &TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(trained.embedding.row(0).iter().all(|&x| x == 0.0));
        // Short documents guarantee windows overlapping <PAD>, so the true
        // row-0 gradient is generally nonzero.
        let batch: Vec<&TokenizedDocument> = train.documents.iter().take(8).collect();
        let (_, grads) = loss_and_gradients(&trained, &batch, &TrainConfig::default()).unwrap();
        assert!(grads.embedding.row(0).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn fit_learns_separable_corpus() {
        let (train, val, vocab_size) = synth_splits(120, 7, 12);
        let model = TextCnnModel::init(
            ModelConfig {
                embed_dim: 8,
                filters_per_width: 4,
                filter_widths: vec![1, 2, 3],
                hidden_units: 8,
                max_len: 12,
                seed: 7,
            },
            vocab_size,
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (_, history) = fit(&model, &train, &val, &cfg).unwrap();
        let best = history.records[history.best_epoch - 1].val_accuracy;
        assert!(best >= 0.95, "best val accuracy {best}");
    }

    #[test]
    fn fit_loss_decreases_after_first_epoch() {
        let (train, val, vocab_size) = synth_splits(120, 8, 12);
        let model = TextCnnModel::init(
            ModelConfig {
                embed_dim: 8,
                filters_per_width: 4,
                filter_widths: vec![1, 2, 3],
                hidden_units: 8,
                max_len: 12,
                seed: 8,
            },
            vocab_size,
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (_, history) = fit(&model, &train, &val, &cfg).unwrap();
        assert!(history.records[1].train_loss < history.records[0].train_loss);
    }

    #[test]
    fn huge_lambda_zeroes_output_weights() {
        let (train, val, vocab_size) = synth_splits(60, 9, 10);
        let model = TextCnnModel::init(
            ModelConfig {
                embed_dim: 4,
                filters_per_width: 2,
                filter_widths: vec![1, 2, 3],
                hidden_units: 4,
                max_len: 10,
                seed: 9,
            },
            vocab_size,
        )
        .unwrap();
        // Small batches give epoch 1 enough proximal steps to collapse W2
        // before the best-epoch snapshot is taken.
        let cfg = TrainConfig {
            lambda: 1e3,
            l1_placement: L1Placement::HiddenToOutput,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, _) = fit(&model, &train, &val, &cfg).unwrap();
        let max_w2 = trained
            .classifier
            .w2
            .iter()
            .fold(0.0f64, |a, &w| a.max(w.abs()));
        assert!(max_w2 < 1e-3, "max |w2| = {max_w2}");
    }

    #[test]
    fn zero_epochs_is_an_error() {
        let (train, val, vocab_size) = synth_splits(20, 10, 8);
        let model = tiny_model(vocab_size, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit(&model, &train, &val, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let (train, val, vocab_size) = synth_splits(40, 11, 8);
        let mk = || {
            let model = TextCnnModel::init(
                ModelConfig {
                    embed_dim: 4,
                    filters_per_width: 2,
                    filter_widths: vec![1, 2, 3],
                    hidden_units: 3,
                    max_len: 8,
                    seed: 11,
                },
                vocab_size,
            )
            .unwrap();
            fit(
                &model,
                &train,
                &val,
                &TrainConfig {
                    epochs: 3,
                    ..TrainConfig::default()
                },
            )
            .unwrap()
        };
        let (a, ha) = mk();
        let (b, hb) = mk();
        assert_eq!(a, b);
        assert_eq!(ha.best_epoch, hb.best_epoch);
        for (x, y) in ha.records.iter().zip(&hb.records) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }

    fn cell(lambda: f64, val_accuracy: f64, region_count: usize) -> SweepCell {
        SweepCell {
            n_f: 2,
            n_h: 4,
            lambda,
            val_accuracy,
            test_accuracy: val_accuracy,
            test_auc: None,
            region_count,
            effective_region_count: region_count,
        }
    }

    #[test]
    fn select_lambda_prefers_accurate_qualifying_cell() {
        let sweep = SweepResult {
            cells: vec![cell(0.0, 0.91, 600), cell(1.0, 0.90, 8)],
        };
        assert_eq!(select_lambda(&sweep, 10).unwrap(), 1.0);
    }

    #[test]
    fn select_lambda_falls_back_to_min_regions() {
        let sweep = SweepResult {
            cells: vec![
                cell(0.0, 0.91, 600),
                cell(1.0, 0.90, 40),
                cell(2.0, 0.85, 12),
            ],
        };
        assert_eq!(select_lambda(&sweep, 10).unwrap(), 2.0);
    }

    #[test]
    fn select_lambda_breaks_ties_toward_larger_lambda() {
        let sweep = SweepResult {
            cells: vec![cell(0.5, 0.9, 4), cell(1.5, 0.9, 5)],
        };
        assert_eq!(select_lambda(&sweep, 10).unwrap(), 1.5);
    }

    #[test]
    fn sweep_single_cell_and_determinism() {
        let (train, val, vocab_size) = synth_splits(40, 13, 8);
        let (test, _) = split_dataset(&val, 0.5, 13).unwrap();
        let model_cfg = ModelConfig {
            embed_dim: 4,
            filters_per_width: 2,
            filter_widths: vec![1, 2, 3],
            hidden_units: 3,
            max_len: 8,
            seed: 13,
        };
        let train_cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = sweep_complexity(
            &[2],
            &[3],
            &model_cfg,
            &train_cfg,
            vocab_size,
            &train,
            &val,
            &test,
        )
        .unwrap();
        assert_eq!(a.cells.len(), 1);
        let b = sweep_complexity(
            &[2],
            &[3],
            &model_cfg,
            &train_cfg,
            vocab_size,
            &train,
            &val,
            &test,
        )
        .unwrap();
        assert_eq!(
            a.cells[0].test_accuracy.to_bits(),
            b.cells[0].test_accuracy.to_bits()
        );
        assert_eq!(a.cells[0].region_count, b.cells[0].region_count);
    }

    #[test]
    fn sweep_lambda_rejects_unsorted_grid() {
        let (train, val, vocab_size) = synth_splits(20, 14, 8);
        let model_cfg = ModelConfig {
            embed_dim: 4,
            filters_per_width: 2,
            filter_widths: vec![1, 2, 3],
            hidden_units: 3,
            max_len: 8,
            seed: 14,
        };
        let err = sweep_lambda(
            &[0.5, 0.1],
            L1Placement::HiddenToOutput,
            &model_cfg,
            &TrainConfig::default(),
            vocab_size,
            &train,
            &val,
            &val,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn history_csv_shape() {
        let history = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.7531,
                val_accuracy: 0.5,
                val_auc: None,
                region_count: 4,
            }],
            best_epoch: 1,
        };
        let csv = history_csv(&history);
        assert_eq!(
            csv,
            "epoch,train_loss,val_accuracy,val_auc,region_count\n1,0.753100,0.500000,N/A,4\n"
        );
    }
}
