//! The six per-batch checks. Lexical, semantic and sentiment scores come
//! from the same functions the audit uses.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::run::AccumulatedDataset;
use super::Metric;
use crate::corpus_io::Corpus;
use crate::embedding::{embed_review, train_word_embeddings, EmbeddingConfig, Vector};
use crate::error::{Error, Result};
use crate::lexical::ngram_stats;
use crate::outliers::{avg_pairwise_similarity, zscores};
use crate::preprocess::Preprocessor;
use crate::semantic::{avg_mst_edge_length, exact_mst};
use crate::sentiment::{segment_positive_rates, LexiconClassifier, LINEAR_BENCHMARK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Minimum unigram uniqueness ratio.
    pub lexical_unigram_lr: f64,
    /// Minimum average MST edge length (exact mode).
    pub semantic_avg_mst_edge: f64,
    pub sentiment_d_sen: f64,
    /// A review is anomalous when its within-batch similarity z-score is at
    /// or below this.
    pub outlier_z: f64,
    /// Maximum share of anomalous reviews.
    pub outlier_max_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lexical_unigram_lr: 0.20,
            semantic_avg_mst_edge: 5e-4,
            sentiment_d_sen: 0.85,
            outlier_z: -3.0,
            outlier_max_fraction: 0.05,
        }
    }
}

/// Target share of reviews per word-count bin (1-10, 11-40, 41-80, 81+).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LengthTargets {
    pub fractions: [f64; 4],
    /// Allowed absolute deviation per bin.
    pub tolerance: f64,
}

impl Default for LengthTargets {
    fn default() -> Self {
        LengthTargets {
            fractions: [0.25, 0.40, 0.25, 0.10],
            tolerance: 0.10,
        }
    }
}

impl LengthTargets {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "length fractions must be in [0, 1] and sum to 1, got {:?}",
                self.fractions
            )));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config("length tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Bin index for a review with `words` punctuation-free tokens.
pub fn length_bin(words: usize) -> usize {
    match words {
        0..=10 => 0,
        11..=40 => 1,
        41..=80 => 2,
        _ => 3,
    }
}

/// Casefolded, punctuation removed, whitespace collapsed.
pub fn normalize_text(text: &str) -> String {
    let kept: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub thresholds: Thresholds,
    pub length: LengthTargets,
    pub embedding: EmbeddingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    pub metric: Metric,
    pub passed: bool,
    /// `None` when the score cannot be computed for this batch.
    pub score: Option<f64>,
    pub threshold: f64,
}

/// Exactly one verdict per evaluated dimension, in [`Metric::EVALUATED`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdicts([MetricVerdict; 6]);

impl MetricVerdicts {
    pub fn from_fn(mut f: impl FnMut(Metric) -> MetricVerdict) -> Self {
        MetricVerdicts(Metric::EVALUATED.map(|m| {
            let v = f(m);
            debug_assert_eq!(v.metric, m);
            v
        }))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetricVerdict> {
        self.0.iter()
    }

    pub fn get(&self, metric: Metric) -> Option<&MetricVerdict> {
        self.0.iter().find(|v| v.metric == metric)
    }

    pub fn all_passed(&self) -> bool {
        self.0.iter().all(|v| v.passed)
    }

    pub fn failed(&self) -> Vec<Metric> {
        self.0.iter().filter(|v| !v.passed).map(|v| v.metric).collect()
    }
}

fn at_least(metric: Metric, score: Option<f64>, threshold: f64) -> MetricVerdict {
    MetricVerdict {
        metric,
        passed: score.is_some_and(|s| s >= threshold),
        score,
        threshold,
    }
}

pub fn evaluate_batch(batch: &Corpus, history: &AccumulatedDataset, settings: &EvalSettings) -> Result<MetricVerdicts> {
    if batch.is_empty() {
        return Err(Error::Precondition("cannot evaluate an empty batch".into()));
    }
    settings.length.validate()?;
    let t = &settings.thresholds;
    let pre = Preprocessor::default();
    let tokenized: Vec<_> = batch.reviews.iter().map(|r| pre.tokenize(&r.text)).collect();
    let content: Vec<Vec<String>> = tokenized.iter().map(|t| t.tokens_content.clone()).collect();

    let lexical = at_least(
        Metric::Lexical,
        ngram_stats(&content, 1).ok().map(|s| s.uniqueness_ratio),
        t.lexical_unigram_lr,
    );

    // Embeddings are trained on everything generated so far plus this batch.
    let mut training: Vec<Vec<String>> = history
        .reviews
        .iter()
        .map(|r| pre.tokenize(&r.review).tokens_content)
        .collect();
    training.extend(content.iter().cloned());
    let vectors: Vec<Vector> = match train_word_embeddings(&training, &settings.embedding) {
        Ok(model) => content
            .iter()
            .filter_map(|c| embed_review(&model, c))
            .filter(|v| !v.is_zero())
            .collect(),
        Err(_) => Vec::new(),
    };

    let semantic_score = if vectors.len() >= 2 {
        let edges = exact_mst(&vectors)?;
        Some(avg_mst_edge_length(&edges, &vectors).mean)
    } else {
        None
    };
    let semantic = at_least(Metric::Semantic, semantic_score, t.semantic_avg_mst_edge);

    let d_sen = segment_positive_rates(batch, &LexiconClassifier::default(), true, LINEAR_BENCHMARK)
        .ok()
        .map(|p| p.d_sen);
    let sentiment = at_least(Metric::Sentiment, d_sen, t.sentiment_d_sen);

    let outlier = if vectors.len() >= 3 {
        let z = zscores(&avg_pairwise_similarity(&vectors)?)?;
        let share = z.iter().filter(|&&z| z <= t.outlier_z).count() as f64 / z.len() as f64;
        MetricVerdict {
            metric: Metric::Outlier,
            passed: share <= t.outlier_max_fraction,
            score: Some(share),
            threshold: t.outlier_max_fraction,
        }
    } else {
        MetricVerdict {
            metric: Metric::Outlier,
            passed: true,
            score: None,
            threshold: t.outlier_max_fraction,
        }
    };

    let mut seen: HashSet<String> = history.reviews.iter().map(|r| normalize_text(&r.review)).collect();
    let mut repeats = 0usize;
    for r in &batch.reviews {
        if !seen.insert(normalize_text(&r.text)) {
            repeats += 1;
        }
    }
    let uniqueness = MetricVerdict {
        metric: Metric::Uniqueness,
        passed: repeats == 0,
        score: Some(1.0 - repeats as f64 / batch.len() as f64),
        threshold: 1.0,
    };

    let mut bins = [0usize; 4];
    for t in &tokenized {
        bins[length_bin(t.content_token_count)] += 1;
    }
    let n = batch.len() as f64;
    let worst = bins
        .iter()
        .zip(&settings.length.fractions)
        .map(|(&c, &f)| (c as f64 / n - f).abs())
        .fold(0.0, f64::max);
    let length = MetricVerdict {
        metric: Metric::Length,
        passed: worst <= settings.length.tolerance + 1e-12,
        score: Some(worst),
        threshold: settings.length.tolerance,
    };

    let mut parts = [lexical, semantic, sentiment, outlier, uniqueness, length].into_iter();
    Ok(MetricVerdicts::from_fn(|_| parts.next().expect("six verdicts")))
}
