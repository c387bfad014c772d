//! Model checkpointing: a single JSON document carrying the config, the
//! vocabulary (token array in id order), and every parameter tensor.
//!
//! Reals are written in scientific notation with 17 significant digits,
//! which is enough for `f64` values to survive a save/load cycle
//! bit-for-bit, so reloaded models reproduce predictions exactly.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ClassifierMlp, ConvFilter, ModelConfig, TextCnnModel};

#[derive(Serialize, Deserialize)]
struct ClassifierRecord {
    /// Row-major `hidden_units × h`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    config: ModelConfig,
    vocab: Vec<String>,
    /// One row per vocabulary id.
    embedding: Vec<Vec<f64>>,
    filters: Vec<ConvFilter>,
    classifier: ClassifierRecord,
}

/// JSON formatter that writes every `f64` with 17 significant digits.
struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        if !value.is_finite() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "non-finite value in checkpoint",
            ));
        }
        write!(writer, "{}", format_f64(value))
    }
}

/// Scientific notation with a 16-digit fraction: 17 significant digits,
/// enough to reconstruct any finite `f64` exactly.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

fn record_from(model: &TextCnnModel, vocab: &Vocabulary) -> CheckpointRecord {
    CheckpointRecord {
        config: model.config.clone(),
        vocab: vocab.tokens().to_vec(),
        embedding: (0..model.embedding.rows())
            .map(|r| model.embedding.row(r).to_vec())
            .collect(),
        filters: model.filters.clone(),
        classifier: ClassifierRecord {
            w1: model.classifier.w1.data().to_vec(),
            b1: model.classifier.b1.clone(),
            w2: model.classifier.w2.clone(),
            b2: model.classifier.b2,
        },
    }
}

fn model_from(record: CheckpointRecord) -> Result<(TextCnnModel, Vocabulary)> {
    let CheckpointRecord {
        config,
        vocab,
        embedding,
        filters,
        classifier,
    } = record;
    config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let vocab = Vocabulary::from_tokens(vocab)?;

    let m = config.embed_dim;
    let k = config.hidden_units;
    let h = config.total_filters();

    if embedding.len() != vocab.size() {
        return Err(Error::Checkpoint(format!(
            "embedding has {} rows but vocabulary has {} tokens",
            embedding.len(),
            vocab.size()
        )));
    }
    let mut emb = Matrix::zeros(embedding.len(), m);
    for (r, row) in embedding.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Checkpoint(format!(
                "embedding row {r} has {} entries, expected {m}",
                row.len()
            )));
        }
        emb.row_mut(r).copy_from_slice(row);
    }
    if emb.row(0).iter().any(|&x| x != 0.0) {
        return Err(Error::Checkpoint("<PAD> embedding row must be zero".into()));
    }

    if filters.len() != h {
        return Err(Error::Checkpoint(format!(
            "expected {h} filters, found {}",
            filters.len()
        )));
    }
    for (j, f) in filters.iter().enumerate() {
        let expected_width = config.filter_widths[j / config.filters_per_width];
        if f.width != expected_width {
            return Err(Error::Checkpoint(format!(
                "filter {j} has width {}, expected {expected_width} (filters are grouped by width)",
                f.width
            )));
        }
        if f.weights.len() != f.width * m {
            return Err(Error::Checkpoint(format!(
                "filter {j} has {} weights, expected {}",
                f.weights.len(),
                f.width * m
            )));
        }
    }

    if classifier.w1.len() != k * h || classifier.b1.len() != k || classifier.w2.len() != k {
        return Err(Error::Checkpoint(format!(
            "classifier dims mismatch: |W1|={}, |b1|={}, |W2|={}, expected {}, {k}, {k}",
            classifier.w1.len(),
            classifier.b1.len(),
            classifier.w2.len(),
            k * h
        )));
    }

    let model = TextCnnModel {
        config,
        embedding: emb,
        filters,
        classifier: ClassifierMlp {
            w1: Matrix::from_vec(k, h, classifier.w1),
            b1: classifier.b1,
            w2: classifier.w2,
            b2: classifier.b2,
        },
    };
    Ok((model, vocab))
}

/// Serialize any value as JSON with 17-significant-digit reals.
pub fn json_precise_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Write any value as a JSON file with 17-significant-digit reals.
pub fn save_json_precise<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = json_precise_string(value)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Serialize a checkpoint to a JSON string.
pub fn checkpoint_to_string(model: &TextCnnModel, vocab: &Vocabulary) -> Result<String> {
    json_precise_string(&record_from(model, vocab))
}

/// Parse a checkpoint from a JSON string, validating all shapes.
pub fn checkpoint_from_str(json: &str) -> Result<(TextCnnModel, Vocabulary)> {
    let record: CheckpointRecord =
        serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    model_from(record)
}

/// Write a checkpoint file.
pub fn save_checkpoint(path: &Path, model: &TextCnnModel, vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let mut ser = serde_json::Serializer::with_formatter(&mut writer, PreciseFormatter);
    record_from(model, vocab)
        .serialize(&mut ser)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Read and validate a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(TextCnnModel, Vocabulary)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let record: CheckpointRecord = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    model_from(record)
}
