//! Deterministic synthetic review corpora for tests, benchmarks, and demos.
//!
//! Positive documents contain only positive sentiment markers and negative
//! documents only negative ones, so the corpora are linearly separable by
//! unigram presence while still carrying realistic filler text.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledText;

const FILLERS: &[&str] = &[
    "the", "a", "this", "place", "it", "was", "really", "we", "and", "to", "of", "food", "service",
    "staff", "came", "back", "here", "time", "with", "my", "they", "had", "menu", "table", "night",
    "lunch", "again", "just", "very",
];

const POSITIVE: &[&str] = &[
    "good",
    "great",
    "excellent",
    "amazing",
    "friendly",
    "delicious",
    "wonderful",
    "perfect",
];

const NEGATIVE: &[&str] = &[
    "bad", "terrible", "awful", "rude", "bland", "slow", "horrible", "mediocre",
];

/// Knobs for corpus generation.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_docs: usize,
    /// Inclusive bounds on real (pre-padding) token count.
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Sentiment markers inserted per document (inclusive bounds).
    pub min_markers: usize,
    pub max_markers: usize,
    /// Probability that a document is negated: every marker gets "not"
    /// inserted directly before it and the label flips. At 0.5 no unigram
    /// carries signal on its own, so classification requires n-grams.
    pub negation_prob: f64,
    /// Probability that a document mixes polarities: it carries a(≠b)
    /// distinct positive and b distinct negative marker types and the label
    /// is `a > b`. Deciding these documents requires telling marker types
    /// apart, not just detecting the strongest one, so they reward filter
    /// capacity and are learned slowly.
    pub mixed_prob: f64,
    /// Probability of flipping a document's label after generation, which
    /// leaves the text separable but the labels noisy.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 200,
            min_tokens: 5,
            max_tokens: 12,
            min_markers: 1,
            max_markers: 3,
            negation_prob: 0.0,
            mixed_prob: 0.0,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

/// Generate a balanced, separable review corpus: document i is positive iff
/// i is even, and carries markers only of its own polarity. With nonzero
/// `negation_prob`, some documents negate every marker ("not good") and
/// flip their label, so the rule is still exact but n-gram-dependent. With
/// nonzero `mixed_prob`, some documents carry both polarities and the label
/// goes to the polarity with more distinct marker types. With nonzero
/// `label_noise`, a fraction of labels is flipped after generation.
pub fn generate_sentiment_corpus(cfg: &SynthConfig) -> Vec<LabeledText> {
    assert!(cfg.min_tokens >= 1 && cfg.max_tokens >= cfg.min_tokens);
    assert!(cfg.min_markers >= 1 && cfg.max_markers >= cfg.min_markers);
    assert!((0.0..=1.0).contains(&cfg.negation_prob));
    assert!((0.0..=1.0).contains(&cfg.mixed_prob));
    assert!((0.0..=1.0).contains(&cfg.label_noise));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Noise draws come from their own stream so the generated text is
    // identical for any noise setting at a fixed seed.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6e6f697365));
    let mut docs = Vec::with_capacity(cfg.num_docs);
    for i in 0..cfg.num_docs {
        let mut label = (i % 2 == 0) as u8;
        let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| FILLERS.choose(&mut rng).unwrap().to_string())
            .collect();
        let mixed = cfg.mixed_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.mixed_prob;
        let mut placed_mixed = false;
        if mixed {
            // Pick counts a ≠ b of distinct marker types so the majority
            // polarity matches the parity label.
            let want_pos_majority = label == 1;
            let feasible: Vec<(usize, usize)> = (1..=4usize)
                .flat_map(|a| (1..=4usize).map(move |b| (a, b)))
                .filter(|&(a, b)| a != b && a + b <= len && (a > b) == want_pos_majority)
                .collect();
            if let Some(&(a, b)) = feasible.choose(&mut rng) {
                let mut positions: Vec<usize> = (0..len).collect();
                positions.shuffle(&mut rng);
                let pos_types = POSITIVE.choose_multiple(&mut rng, a);
                for (&slot, marker) in positions[..a].iter().zip(pos_types) {
                    tokens[slot] = marker.to_string();
                }
                let neg_types = NEGATIVE.choose_multiple(&mut rng, b);
                for (&slot, marker) in positions[a..a + b].iter().zip(neg_types) {
                    tokens[slot] = marker.to_string();
                }
                placed_mixed = true;
            }
        }
        if !placed_mixed {
            let hi = cfg.max_markers.min(len);
            let lo = cfg.min_markers.min(hi);
            let markers = rng.random_range(lo..=hi);
            let pool = if label == 1 { POSITIVE } else { NEGATIVE };
            let mut marker_at = vec![false; tokens.len()];
            for _ in 0..markers {
                let pos = rng.random_range(0..tokens.len());
                tokens[pos] = pool.choose(&mut rng).unwrap().to_string();
                marker_at[pos] = true;
            }
            if cfg.negation_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.negation_prob {
                for pos in (0..tokens.len()).rev() {
                    if marker_at[pos] {
                        tokens.insert(pos, "not".to_string());
                    }
                }
                label = 1 - label;
            }
        }
        if cfg.label_noise > 0.0 && noise_rng.random_range(0.0..1.0) < cfg.label_noise {
            label = 1 - label;
        }
        docs.push(LabeledText { tokens, label });
    }
    docs
}

/// Render generated documents as a `text,label` CSV (tokens joined by
/// spaces; all synthetic tokens are alphanumeric so no quoting is needed).
pub fn to_csv_string(docs: &[LabeledText]) -> String {
    let mut out = String::from("text,label\n");
    for doc in docs {
        out.push_str(&doc.tokens.join(" "));
        out.push(',');
        out.push_str(if doc.label == 1 { "1" } else { "0" });
        out.push('\n');
    }
    out
}
