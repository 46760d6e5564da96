//! Binary sentiment per review, positive rate per rating segment, and the
//! sentiment diversity score against a linear benchmark.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus_io::Corpus;
use crate::error::{Error, Result};
use crate::preprocess::word_tokens;

/// Expected positive rate per rating 1..=5: (rating - 1) / 4.
pub const LINEAR_BENCHMARK: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

const POSITIVE_WORDS: &str = include_str!("../data/sentiment_positive.txt");
const NEGATIVE_WORDS: &str = include_str!("../data/sentiment_negative.txt");
const NEGATORS: &[&str] = &[
    "not",
    "never",
    "no",
    "cannot",
    "don't",
    "doesn't",
    "didn't",
    "isn't",
    "wasn't",
    "aren't",
    "weren't",
    "can't",
    "won't",
    "wouldn't",
    "shouldn't",
    "couldn't",
    "hasn't",
    "haven't",
    "hadn't",
];
/// A negator flips the first polar word among the next three tokens.
const NEGATION_REACH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
}

pub trait SentimentClassifier {
    /// Recorded in report provenance.
    fn name(&self) -> &str;

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<SentimentLabel>>;

    fn classify(&self, text: &str) -> Result<SentimentLabel> {
        self.classify_batch(&[text])?
            .pop()
            .ok_or_else(|| Error::Backend("classifier returned no label".into()))
    }
}

/// Signed polarity count with negation; a zero or tied score is negative.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    positive: HashSet<String>,
    negative: HashSet<String>,
    negators: HashSet<String>,
}

fn word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Default for LexiconClassifier {
    fn default() -> Self {
        LexiconClassifier {
            positive: word_list(POSITIVE_WORDS),
            negative: word_list(NEGATIVE_WORDS),
            negators: NEGATORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LexiconClassifier {
    pub fn score(&self, text: &str) -> i64 {
        let mut score = 0i64;
        let mut negation_left = 0usize;
        for tok in word_tokens(text) {
            let word = tok.text.to_lowercase().replace('\u{2019}', "'");
            if self.negators.contains(&word) {
                negation_left = NEGATION_REACH;
                continue;
            }
            let polarity = if self.positive.contains(&word) {
                1
            } else if self.negative.contains(&word) {
                -1
            } else {
                0
            };
            if polarity != 0 {
                score += if negation_left > 0 { -polarity } else { polarity };
                negation_left = 0;
            } else {
                negation_left = negation_left.saturating_sub(1);
            }
        }
        score
    }

    pub fn label(&self, text: &str) -> SentimentLabel {
        if self.score(text) > 0 {
            SentimentLabel::Positive
        } else {
            SentimentLabel::Negative
        }
    }
}

impl SentimentClassifier for LexiconClassifier {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<SentimentLabel>> {
        Ok(texts.iter().map(|t| self.label(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentProfile {
    /// Positive rate per rating 1..=5; `None` for an empty segment.
    pub y: [Option<f64>; 5],
    pub benchmark: [f64; 5],
    pub segment_counts: [usize; 5],
    pub positive_counts: [usize; 5],
    pub d_sen: f64,
    pub backend: String,
    /// Empty-text reviews are left out of every segment.
    pub skipped_empty_reviews: usize,
}

/// Labels every non-empty review and returns per-rating positive rates.
/// Empty segments are an error unless `allow_empty_segments` is set, in
/// which case they are left out of the score.
pub fn segment_positive_rates(
    corpus: &Corpus,
    classifier: &dyn SentimentClassifier,
    allow_empty_segments: bool,
    benchmark: [f64; 5],
) -> Result<SentimentProfile> {
    let included: Vec<_> = corpus.reviews.iter().filter(|r| !r.is_empty()).collect();
    let mut segment_counts = [0usize; 5];
    for r in &included {
        segment_counts[r.rating as usize - 1] += 1;
    }
    if !allow_empty_segments {
        if let Some(i) = segment_counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptySegment { rating: i as u8 + 1 });
        }
    }
    let texts: Vec<&str> = included.iter().map(|r| r.text.as_str()).collect();
    let labels = classifier.classify_batch(&texts)?;
    if labels.len() != texts.len() {
        return Err(Error::Backend(format!(
            "classifier returned {} labels for {} texts",
            labels.len(),
            texts.len()
        )));
    }
    let mut positive_counts = [0usize; 5];
    for (r, label) in included.iter().zip(&labels) {
        if *label == SentimentLabel::Positive {
            positive_counts[r.rating as usize - 1] += 1;
        }
    }
    let mut y = [None; 5];
    for i in 0..5 {
        if segment_counts[i] > 0 {
            y[i] = Some(positive_counts[i] as f64 / segment_counts[i] as f64);
        }
    }
    let d_sen = sentiment_diversity(&y, &benchmark)?;
    Ok(SentimentProfile {
        y,
        benchmark,
        segment_counts,
        positive_counts,
        d_sen,
        backend: classifier.name().to_string(),
        skipped_empty_reviews: corpus.len() - included.len(),
    })
}

/// Mean over present segments of `1 - |y_i - benchmark_i|`.
pub fn sentiment_diversity(y: &[Option<f64>; 5], benchmark: &[f64; 5]) -> Result<f64> {
    let present: Vec<f64> = y
        .iter()
        .zip(benchmark)
        .filter_map(|(yi, bi)| yi.map(|v| 1.0 - (v - bi).abs()))
        .collect();
    if present.is_empty() {
        return Err(Error::undefined("sentiment.d_sen", "every rating segment is empty"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
