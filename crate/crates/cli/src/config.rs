//! Run configuration: a single JSON file drives every command, every
//! field has a default, and `--set key=value` overrides individual
//! fields by dotted path before deserialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use glassbox_core::{CorpusFormat, Error, MergeConfig, ModelConfig, TrainConfig};

use crate::CliError;

/// Which slice of the corpus a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        };
        f.write_str(name)
    }
}

/// One config to rule every subcommand. Defaults (also listed in the
/// README):
///
/// - `corpus`: `corpus.csv` — `text,label` CSV (or JSONL via
///   `corpus_format: "jsonl"`)
/// - `output_dir`: `out` — all artifacts land here
/// - `checkpoint`: `<output_dir>/checkpoint.json` when null
/// - `min_freq`: 1 — vocabulary frequency cutoff
/// - `train_fraction`: 0.8 — corpus share used for training
/// - `val_fraction`: 0.5 — share of the remaining holdout used for
///   validation (the rest is the test split)
/// - `seed`: 0 — dataset split seed (`--seed` overrides this plus the
///   model and training seeds)
/// - `model`, `train`, `merge`: see the corresponding config types;
///   any subset of their fields may be given
/// - `nf_values`, `nh_values`: `[3, 10, 20, 30, 40, 50]` — complexity
///   sweep grid axes
/// - `lambda_values`: `[0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0]`
/// - `max_regions`: 10 — region budget for λ selection
/// - `distance_grid`: `[]` — when nonempty, the merge threshold is
///   chosen from this grid by validation accuracy instead of taking
///   `merge.distance_threshold` as-is
/// - `top_k_filters`: 5, `top_k_samples`: 5 — report sizes
/// - `unwrap_split`: test, `merge_fit_split`: train,
///   `explain_split`: test, `eval_split`: test
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub min_freq: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub merge: MergeConfig,
    pub nf_values: Vec<usize>,
    pub nh_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
    pub max_regions: usize,
    pub distance_grid: Vec<f64>,
    pub top_k_filters: usize,
    pub top_k_samples: usize,
    pub unwrap_split: Split,
    pub merge_fit_split: Split,
    pub explain_split: Split,
    pub eval_split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.csv"),
            corpus_format: CorpusFormat::Csv,
            output_dir: PathBuf::from("out"),
            checkpoint: None,
            min_freq: 1,
            train_fraction: 0.8,
            val_fraction: 0.5,
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            merge: MergeConfig::default(),
            nf_values: vec![3, 10, 20, 30, 40, 50],
            nh_values: vec![3, 10, 20, 30, 40, 50],
            lambda_values: vec![0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0],
            max_regions: 10,
            distance_grid: Vec::new(),
            top_k_filters: 5,
            top_k_samples: 5,
            unwrap_split: Split::Test,
            merge_fit_split: Split::Train,
            explain_split: Split::Test,
            eval_split: Split::Test,
        }
    }
}

impl RunConfig {
    /// Resolved checkpoint path.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint.json"))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config_err = |msg: String| CliError::Data(Error::Config(msg));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config_err(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(config_err(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.top_k_filters < 1 {
            return Err(config_err("top_k_filters must be >= 1".into()));
        }
        if self.top_k_samples < 1 {
            return Err(config_err("top_k_samples must be >= 1".into()));
        }
        if self.max_regions < 1 {
            return Err(config_err("max_regions must be >= 1".into()));
        }
        self.model.validate().map_err(CliError::Data)?;
        self.train.validate().map_err(CliError::Data)?;
        self.merge.validate().map_err(CliError::Data)?;
        Ok(())
    }
}

/// Parse an override value: JSON when it parses, bare string otherwise
/// (so `--set corpus=data.csv` needs no quoting).
fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Write `value` at a dotted path, creating intermediate objects.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Usage(format!("invalid --set key {key:?}")));
    }
    for segment in &segments[..segments.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!("--set key {key:?} descends into a non-object"))
        })?;
        node = obj
            .entry(segment.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("--set key {key:?} descends into a non-object")))?;
    obj.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Load the config file, apply `--set` overrides and the `--seed` flag,
/// and deserialize strictly (unknown keys are usage errors).
pub fn load_config(path: &Path, sets: &[String], seed: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Usage(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    }
    for entry in sets {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {entry:?}")))?;
        set_path(&mut value, key, parse_override(raw))?;
    }
    if let Some(s) = seed {
        set_path(&mut value, "seed", Value::from(s))?;
        set_path(&mut value, "model.seed", Value::from(s))?;
        set_path(&mut value, "train.seed", Value::from(s))?;
    }
    let cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &tempfile::TempDir, json: &str) -> PathBuf {
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, json).unwrap();
        path
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"corpus": "reviews.csv"}"#);
        let cfg = load_config(&path, &[], None).unwrap();
        assert_eq!(cfg.corpus, PathBuf::from("reviews.csv"));
        assert_eq!(cfg.model.hidden_units, 10);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.eval_split, Split::Test);
    }

    #[test]
    fn set_overrides_nested_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, "{}");
        let cfg = load_config(
            &path,
            &[
                "train.learning_rate=0.005".into(),
                "model.hidden_units=4".into(),
                "corpus=data.csv".into(),
                "lambda_values=[0.0,0.5]".into(),
            ],
            None,
        )
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.005);
        assert_eq!(cfg.model.hidden_units, 4);
        assert_eq!(cfg.corpus, PathBuf::from("data.csv"));
        assert_eq!(cfg.lambda_values, vec![0.0, 0.5]);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, "{}");
        let err = load_config(&path, &["trian.epochs=5".into()], None).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        let err = load_config(&path, &["model.hiden=5".into()], None).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn seed_flag_overrides_all_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"seed": 3, "model": {"seed": 4}}"#);
        let cfg = load_config(&path, &[], Some(9)).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.seed, 9);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn missing_config_file_is_data_error() {
        let err = load_config(Path::new("/nonexistent/cfg.json"), &[], None).unwrap_err();
        assert!(matches!(err, CliError::Data(Error::Io { .. })));
    }

    #[test]
    fn bad_fraction_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"train_fraction": 1.5}"#);
        let err = load_config(&path, &[], None).unwrap_err();
        assert!(matches!(err, CliError::Data(Error::Config(_))));
    }
}
