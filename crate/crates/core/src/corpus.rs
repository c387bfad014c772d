//! Text ingestion: tokenization, vocabulary construction, and encoding of
//! labeled documents into fixed-length id sequences.
//!
//! Id 0 is reserved for `<PAD>` and id 1 for `<OOV>`. Remaining ids are
//! assigned by descending corpus frequency, ties broken lexicographically,
//! so a vocabulary is a pure function of its input corpus.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<PAD>";
pub const OOV_TOKEN: &str = "<OOV>";
pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;

/// Token string to id mapping with the two reserved specials.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Rebuild from a token array in id order (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != OOV_TOKEN {
            return Err(Error::Checkpoint(format!(
                "vocabulary must start with {PAD_TOKEN}, {OOV_TOKEN}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if token_to_id.insert(token.clone(), id as u32).is_some() {
                return Err(Error::Checkpoint(format!("duplicate token {token:?}")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Token strings in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Lowercase, split on whitespace, and isolate punctuation characters into
/// their own tokens. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.to_lowercase().chars() {
            if c.is_alphanumeric() {
                current.push(c);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Build a vocabulary from tokenized documents. Tokens with corpus frequency
/// below `min_freq` are dropped; survivors are ordered by descending
/// frequency, then lexicographically.
pub fn build_vocabulary<'a, I>(docs: I, min_freq: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for token in doc {
            *freq.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(_, count)| count >= min_freq)
        .collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut id_to_token = Vec::with_capacity(pairs.len() + 2);
    id_to_token.push(PAD_TOKEN.to_string());
    id_to_token.push(OOV_TOKEN.to_string());
    id_to_token.extend(pairs.into_iter().map(|(token, _)| token.to_string()));

    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(id, token)| (token.clone(), id as u32))
        .collect();
    Vocabulary {
        token_to_id,
        id_to_token,
    }
}

/// Map tokens to ids, truncating to the first `max_len` tokens and
/// right-padding with `PAD_ID`. Unknown tokens map to `OOV_ID`.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t).unwrap_or(OOV_ID))
        .collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// A tokenized, not yet encoded record.
#[derive(Clone, Debug)]
pub struct LabeledText {
    pub tokens: Vec<String>,
    pub label: u8,
}

/// An encoded document: exactly `max_len` ids plus the pre-padding tokens
/// it was encoded from (truncated to `max_len`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub label: u8,
}

impl TokenizedDocument {
    /// The token rendered at a position of the padded sequence. Positions past
    /// the real text render as `<PAD>`; out-of-vocabulary tokens render as
    /// `<OOV>`, matching how the model actually saw the document.
    pub fn token_at(&self, pos: usize) -> &str {
        match self.ids.get(pos) {
            Some(&PAD_ID) | None => PAD_TOKEN,
            Some(&OOV_ID) => OOV_TOKEN,
            Some(_) => &self.tokens[pos],
        }
    }
}

/// A collection of encoded documents with binary labels.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub documents: Vec<TokenizedDocument>,
}

impl Dataset {
    /// Encode tokenized records against a vocabulary.
    pub fn encode(records: &[LabeledText], vocab: &Vocabulary, max_len: usize) -> Self {
        let documents = records
            .iter()
            .map(|r| TokenizedDocument {
                ids: encode(&r.tokens, vocab, max_len),
                tokens: r.tokens.iter().take(max_len).cloned().collect(),
                label: r.label,
            })
            .collect();
        Dataset { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.documents.iter().filter(|d| d.label == 1).count()
    }

    pub fn negative_count(&self) -> usize {
        self.documents.iter().filter(|d| d.label == 0).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.documents.iter().map(|d| d.label).collect()
    }
}

/// Corpus file format.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// Header `text,label`, RFC 4180 quoting.
    #[default]
    Csv,
    /// One JSON object per line with keys `text` and `label`.
    Jsonl,
}

fn parse_label(raw: &str, line: u64) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            line,
            message: format!("label must be 0 or 1, got {other:?}"),
        }),
    }
}

/// Load and tokenize a labeled corpus. Records keep file order; malformed
/// records fail with their 1-based line number.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<LabeledText>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        CorpusFormat::Csv => load_csv(file, path),
        CorpusFormat::Jsonl => load_jsonl(file),
    }
}

fn load_csv(file: File, path: &Path) -> Result<Vec<LabeledText>> {
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let text_idx = headers.iter().position(|h| h == "text");
    let label_idx = headers.iter().position(|h| h == "label");
    let (text_idx, label_idx) = match (text_idx, label_idx) {
        (Some(t), Some(l)) => (t, l),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header with `text` and `label` columns in {path:?}"),
            })
        }
    };

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let text = record.get(text_idx).ok_or_else(|| Error::Parse {
            line,
            message: "missing `text` field".to_string(),
        })?;
        let label = record.get(label_idx).ok_or_else(|| Error::Parse {
            line,
            message: "missing `label` field".to_string(),
        })?;
        records.push(LabeledText {
            tokens: tokenize(text),
            label: parse_label(label, line)?,
        });
    }
    Ok(records)
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    label: serde_json::Value,
}

fn load_jsonl(file: File) -> Result<Vec<LabeledText>> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = match &record.label {
            serde_json::Value::Number(n) if n.as_u64() == Some(0) => 0,
            serde_json::Value::Number(n) if n.as_u64() == Some(1) => 1,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("label must be 0 or 1, got {other}"),
                })
            }
        };
        records.push(LabeledText {
            tokens: tokenize(&record.text),
            label,
        });
    }
    Ok(records)
}

/// Deterministically shuffle under `seed` and split into
/// (`round(n * train_fraction)`, remainder). The outputs cover the input.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::Empty("split_dataset needs at least 2 documents"));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let train_size = (n as f64 * train_fraction).round() as usize;
    let take = |idx: &[usize]| Dataset {
        documents: idx.iter().map(|&i| ds.documents[i].clone()).collect(),
    };
    Ok((take(&indices[..train_size]), take(&indices[train_size..])))
}
