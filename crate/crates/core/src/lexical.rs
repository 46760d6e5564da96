//! N-gram uniqueness ratio and normalized entropy, pooled over the corpus.
//!
//! N-grams are contiguous windows inside one review; they never span two
//! reviews.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramStats {
    pub n: usize,
    pub total: u64,
    pub unique: u64,
    #[serde(rename = "L_r")]
    pub uniqueness_ratio: f64,
    #[serde(rename = "H_n")]
    pub normalized_entropy: f64,
}

fn check_n(n: usize) -> Result<()> {
    if (1..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("n-gram order {n} outside 1..={MAX_N}")))
    }
}

/// The multiset of n-grams in one token list.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Result<HashMap<Vec<String>, u64>> {
    check_n(n)?;
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let gram = window.iter().map(|t| t.as_ref().to_string()).collect();
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Pooled n-gram frequencies; tokens are interned so keys are fixed-size.
fn pooled_frequencies<S: AsRef<str>>(corpus_tokens: &[Vec<S>], n: usize) -> Vec<u64> {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut counts: HashMap<[u32; MAX_N], u64> = HashMap::new();
    let mut encoded = Vec::new();
    for tokens in corpus_tokens {
        if tokens.len() < n {
            continue;
        }
        encoded.clear();
        for t in tokens {
            let next = ids.len() as u32;
            encoded.push(*ids.entry(t.as_ref()).or_insert(next));
        }
        for window in encoded.windows(n) {
            let mut key = [u32::MAX; MAX_N];
            key[..n].copy_from_slice(window);
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let mut freqs: Vec<u64> = counts.into_values().collect();
    // Fixed summation order keeps the entropy bit-reproducible.
    freqs.sort_unstable();
    freqs
}

/// Shannon entropy (bits) of a frequency table summing to `total`.
fn entropy_bits(freqs: &[u64], total: u64) -> f64 {
    let t = total as f64;
    -freqs
        .iter()
        .map(|&f| {
            let p = f as f64 / t;
            p * p.log2()
        })
        .sum::<f64>()
}

pub fn ngram_stats<S: AsRef<str>>(corpus_tokens: &[Vec<S>], n: usize) -> Result<NgramStats> {
    check_n(n)?;
    let freqs = pooled_frequencies(corpus_tokens, n);
    let total: u64 = freqs.iter().sum();
    if total == 0 {
        return Err(Error::undefined(
            format!("lexical.n{n}"),
            format!("corpus has no {n}-grams"),
        ));
    }
    let unique = freqs.len() as u64;
    let normalized_entropy = if unique < 2 {
        0.0
    } else {
        (entropy_bits(&freqs, total) / (unique as f64).log2()).clamp(0.0, 1.0)
    };
    Ok(NgramStats {
        n,
        total,
        unique,
        uniqueness_ratio: unique as f64 / total as f64,
        normalized_entropy,
    })
}

pub fn lexical_uniqueness_ratio<S: AsRef<str>>(corpus_tokens: &[Vec<S>], n: usize) -> Result<f64> {
    ngram_stats(corpus_tokens, n).map(|s| s.uniqueness_ratio)
}

pub fn normalized_entropy<S: AsRef<str>>(corpus_tokens: &[Vec<S>], n: usize) -> Result<f64> {
    ngram_stats(corpus_tokens, n).map(|s| s.normalized_entropy)
}

/// Stats for n = 1..=5; each order succeeds or fails on its own.
pub fn lexical_profile<S: AsRef<str>>(corpus_tokens: &[Vec<S>]) -> Vec<Result<NgramStats>> {
    (1..=MAX_N).map(|n| ngram_stats(corpus_tokens, n)).collect()
}
