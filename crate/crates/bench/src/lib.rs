//! Shared fixtures for the pipeline benchmarks: a trained-shape model and
//! an encoded synthetic dataset at a realistic desk scale.

use glassbox_core::{
    build_vocabulary, generate_sentiment_corpus, Dataset, ModelConfig, SynthConfig, TextCnnModel,
    Vocabulary,
};

/// Deterministic corpus + vocabulary + encoded dataset.
pub fn fixture_dataset(num_docs: usize, max_len: usize, seed: u64) -> (Vocabulary, Dataset) {
    let records = generate_sentiment_corpus(&SynthConfig {
        num_docs,
        min_tokens: 5,
        max_tokens: max_len,
        seed,
        ..SynthConfig::default()
    });
    let vocab = build_vocabulary(records.iter().map(|r| r.tokens.as_slice()), 1);
    let ds = Dataset::encode(&records, &vocab, max_len);
    (vocab, ds)
}

/// Freshly initialized model sized like the desk-scale experiments.
pub fn fixture_model(vocab_size: usize, max_len: usize, seed: u64) -> TextCnnModel {
    TextCnnModel::init(
        ModelConfig {
            embed_dim: 8,
            filters_per_width: 10,
            filter_widths: vec![1, 2, 3],
            hidden_units: 10,
            max_len,
            seed,
        },
        vocab_size,
    )
    .expect("valid benchmark model config")
}
