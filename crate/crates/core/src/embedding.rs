//! Corpus-local word vectors (skip-gram with negative sampling) and the
//! review- and user-level averages built from them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath;

/// Dense real vector. Review and user embeddings are stored in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Self {
        Vector(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        vecmath::norm_sq(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * factor).collect())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub window: usize,
    pub dimension: usize,
    pub epochs: usize,
    pub negative_samples: usize,
    pub min_count: u64,
    /// Decays linearly toward zero over all epochs.
    pub initial_learning_rate: f32,
    pub rng_seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            window: 5,
            dimension: 100,
            epochs: 5,
            negative_samples: 5,
            min_count: 1,
            initial_learning_rate: 0.025,
            rng_seed: 42,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Parameter("window must be >= 1".into()));
        }
        if self.dimension < 1 {
            return Err(Error::Parameter("dimension must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.initial_learning_rate.is_nan() || self.initial_learning_rate <= 0.0 {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dimension: usize,
    /// Row-major |V| x dimension.
    matrix: Vec<f32>,
}

impl EmbeddingModel {
    pub fn from_rows(words: Vec<String>, dimension: usize, matrix: Vec<f32>) -> Result<Self> {
        if matrix.len() != words.len() * dimension {
            return Err(Error::Parameter(format!(
                "matrix has {} values, expected {} x {}",
                matrix.len(),
                words.len(),
                dimension
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training("non-finite weight".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Parameter(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(EmbeddingModel {
            words,
            index,
            dimension,
            matrix,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.matrix[idx * self.dimension..(idx + 1) * self.dimension]
    }

    pub fn word_vector(&self, token: &str) -> Option<Vector> {
        self.index_of(token)
            .map(|i| Vector(self.row(i).iter().map(|&x| x as f64).collect()))
    }

    /// Text format: a `<vocab size> <dimension>` header line, then one
    /// `<token> <v1> ... <vd>` line per word. Values print in shortest
    /// round-trip form, so save/load is lossless.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut line = String::new();
        writeln!(out, "{} {}", self.words.len(), self.dimension).map_err(|e| Error::io(path, e))?;
        for (i, word) in self.words.iter().enumerate() {
            line.clear();
            line.push_str(word);
            for x in self.row(i) {
                let _ = write!(line, " {x}");
            }
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let bad = |line: usize, msg: &str| Error::Record {
            line: line as u64,
            message: msg.to_string(),
        };
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace().map(str::parse::<usize>);
        let (vocab, dim) = match (parts.next(), parts.next()) {
            (Some(Ok(v)), Some(Ok(d))) => (v, d),
            _ => return Err(bad(1, "header must be `<vocab> <dim>`")),
        };
        let mut words = Vec::with_capacity(vocab);
        let mut matrix = Vec::with_capacity(vocab * dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let word = fields.next().unwrap_or_default().to_string();
            let before = matrix.len();
            for f in fields {
                matrix.push(f.parse::<f32>().map_err(|_| bad(i + 2, "bad float"))?);
            }
            if matrix.len() - before != dim {
                return Err(bad(i + 2, "wrong number of components"));
            }
            words.push(word);
        }
        if words.len() != vocab {
            return Err(bad(1, "row count does not match header"));
        }
        EmbeddingModel::from_rows(words, dim, matrix)
    }
}

fn build_vocabulary(corpus_tokens: &[Vec<String>], min_count: u64) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tokens in corpus_tokens {
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    vocab
}

const MAX_LOGIT: f32 = 6.0;

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling. Context pairs never cross review
/// boundaries. Training is single-threaded and fully determined by the
/// config (including `rng_seed`).
pub fn train_word_embeddings(corpus_tokens: &[Vec<String>], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    let vocab = build_vocabulary(corpus_tokens, config.min_count);
    if vocab.is_empty() {
        return Err(Error::Training("empty vocabulary".into()));
    }
    let index: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.as_str(), i as u32))
        .collect();
    let sentences: Vec<Vec<u32>> = corpus_tokens
        .iter()
        .map(|toks| toks.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();

    let dim = config.dimension;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut syn0: Vec<f32> = (0..v * dim).map(|_| (rng.gen::<f32>() - 0.5) / dim as f32).collect();
    let mut syn1 = vec![0f32; v * dim];
    let noise = WeightedIndex::new(vocab.iter().map(|(_, c)| (*c as f64).powf(0.75)))
        .map_err(|e| Error::Training(e.to_string()))?;

    let words_per_epoch: usize = sentences.iter().map(Vec::len).sum();
    let total = (config.epochs * words_per_epoch) as f32 + 1.0;
    let start_lr = config.initial_learning_rate;
    let mut processed = 0usize;
    let mut grad = vec![0f32; dim];

    for _epoch in 0..config.epochs {
        for sentence in &sentences {
            for pos in 0..sentence.len() {
                let lr = start_lr * (1.0 - processed as f32 / total).max(1e-4);
                processed += 1;
                if sentence.len() < 2 {
                    continue;
                }
                let center = sentence[pos] as usize;
                let shrink = rng.gen_range(0..config.window);
                let reach = config.window - shrink;
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for (ctx_pos, &ctx) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    let input = ctx as usize;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for d in 0..=config.negative_samples {
                        let (target, label) = if d == 0 {
                            (center, 1.0f32)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let w_in = &syn0[input * dim..(input + 1) * dim];
                        let w_out = &mut syn1[target * dim..(target + 1) * dim];
                        let logit: f32 = w_in.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum();
                        let g = if logit > MAX_LOGIT {
                            (label - 1.0) * lr
                        } else if logit < -MAX_LOGIT {
                            label * lr
                        } else {
                            (label - sigmoid(logit)) * lr
                        };
                        for k in 0..dim {
                            grad[k] += g * w_out[k];
                            w_out[k] += g * w_in[k];
                        }
                    }
                    let w_in = &mut syn0[input * dim..(input + 1) * dim];
                    for (w, g) in w_in.iter_mut().zip(&grad) {
                        *w += g;
                    }
                }
            }
        }
    }

    let words = vocab.into_iter().map(|(w, _)| w).collect();
    EmbeddingModel::from_rows(words, dim, syn0)
}

/// Mean of the in-vocabulary word vectors, or `None` when no token is known.
///
/// Rows are summed in vocabulary-index order, so any permutation of the same
/// token multiset yields the identical vector.
pub fn embed_review<S: AsRef<str>>(model: &EmbeddingModel, tokens_content: &[S]) -> Option<Vector> {
    let mut ids: Vec<usize> = tokens_content
        .iter()
        .filter_map(|t| model.index_of(t.as_ref()))
        .collect();
    if ids.is_empty() {
        return None;
    }
    ids.sort_unstable();
    let mut sum = vec![0f64; model.dimension()];
    for &id in &ids {
        for (s, &x) in sum.iter_mut().zip(model.row(id)) {
            *s += x as f64;
        }
    }
    let n = ids.len() as f64;
    Some(Vector(sum.into_iter().map(|s| s / n).collect()))
}

/// Component-wise mean of a user's review vectors; order-independent.
pub fn embed_user(review_vectors: &[Vector]) -> Result<Vector> {
    let first = review_vectors
        .first()
        .ok_or_else(|| Error::Precondition("a user needs at least one review vector".into()))?;
    let dim = first.dim();
    if review_vectors.iter().any(|v| v.dim() != dim) {
        return Err(Error::Precondition("review vectors differ in dimension".into()));
    }
    let mut ordered: Vec<&Vector> = review_vectors.iter().collect();
    ordered.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut sum = vec![0f64; dim];
    for v in ordered {
        for (s, x) in sum.iter_mut().zip(&v.0) {
            *s += x;
        }
    }
    let n = review_vectors.len() as f64;
    Ok(Vector(sum.into_iter().map(|s| s / n).collect()))
}
