//! Self-interpretable text classification via exact local linear models.
//!
//! The pipeline trains a small convolutional text classifier whose
//! piecewise-linear head can be *unwrapped*: for every ReLU activation
//! region the network is exactly a linear model over pooled n-gram
//! feature activations. Regions can be simplified by sparsity-inducing
//! regularization and agglomerative merging, then rendered as
//! human-readable reports that tie each linear coefficient back to the
//! n-grams that produced its feature.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod interpret;
pub mod linalg;
pub mod merging;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;
pub mod unwrapper;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, format_f64, json_precise_string, load_checkpoint,
    save_checkpoint, save_json_precise,
};
pub use corpus::{
    build_vocabulary, encode, load_corpus, split_dataset, tokenize, CorpusFormat, Dataset,
    LabeledText, TokenizedDocument, Vocabulary, OOV_ID, OOV_TOKEN, PAD_ID, PAD_TOKEN,
};
pub use error::{Error, Result};
pub use interpret::{
    attribution_from_forward, build_merged_report, build_report, histogram_csv, ngram_for_filter,
    rank_filters, report_json, report_markdown, score_histogram, top_samples, Direction,
    FilterAttribution, InterpretationReport, RankedFilter, RegionReport, SampleRow, HISTOGRAM_BINS,
};
pub use linalg::{dot, Matrix};
pub use merging::{
    absorb_small_regions, agglomerative_merge, agglomerative_merge_with_distances,
    connectivity_graph, llm_distance, load_merged, merge_regions, merge_report_csv, refit_regions,
    region_centroids, save_merged, select_distance_threshold, MergeConfig, MergedModel,
    MergedRegion,
};
pub use metrics::{accuracy, auc, f1, format_metric};
pub use model::{
    conv_window, convolve, embed, max_pool, sigmoid, ClassifierMlp, ConvFilter, Forward,
    ModelConfig, PooledFeatures, TextCnnModel,
};
pub use synth::{generate_sentiment_corpus, SynthConfig};
pub use training::{
    fit, history_csv, l1_term, loss_and_gradients, select_lambda, sweep_complexity, sweep_csv,
    sweep_lambda, EpochRecord, Gradients, L1Placement, SweepCell, SweepResult, TrainConfig,
    TrainHistory,
};
pub use unwrapper::{
    activation_bits, activation_pattern, effective_region_count, enumerate_regions,
    enumerate_regions_from_forwards, extract_llm, forward_dataset, region_stats, region_table_csv,
    ActivationPattern, LocalLinearModel, RegionStats,
};
