//! Full audits and side-by-side comparison of their reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus_io::Corpus;
use crate::embedding::{embed_review, train_word_embeddings, EmbeddingConfig, EmbeddingModel, Vector};
use crate::error::{Error, Result};
use crate::lexical::{ngram_stats, NgramStats, MAX_N};
use crate::outliers::{detect_outliers, OutlierAnalysis, OutlierOptions, OutlierReport};
use crate::preprocess::{stopword_set, Preprocessor};
use crate::privacy::{content_privacy_stats, ContentPrivacyStats, MentionExtractor, RuleExtractor};
use crate::semantic::{semantic_report, SemanticOptions, SemanticReport};
use crate::sentiment::{
    segment_positive_rates, LexiconClassifier, SentimentClassifier, SentimentProfile, LINEAR_BENCHMARK,
};

/// Placeholder for a missing cell in comparison tables.
pub const MISSING_CELL: &str = "—";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Seeds embedding training; overrides `embedding.rng_seed`.
    pub seed: u64,
    pub stopwords: Option<PathBuf>,
    pub embedding: EmbeddingConfig,
    pub semantic: SemanticOptions,
    pub outliers: OutlierOptions,
    pub allow_empty_segments: bool,
    /// Wall-clock timings make the report differ between runs, so they are
    /// off unless asked for.
    pub record_timings: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: EmbeddingConfig::default().rng_seed,
            stopwords: None,
            embedding: EmbeddingConfig::default(),
            semantic: SemanticOptions::default(),
            outliers: OutlierOptions::default(),
            allow_empty_segments: false,
            record_timings: false,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        if self.semantic.k == 0 {
            return Err(Error::Parameter("knn k must be at least 1".into()));
        }
        if !self.outliers.theta_g.is_finite() || !self.outliers.theta_l.is_finite() {
            return Err(Error::Parameter("outlier thresholds must be finite".into()));
        }
        Ok(())
    }

    /// Reads a TOML file with the same fields as this struct.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn effective_embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            rng_seed: self.seed,
            ..self.embedding.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendNames {
    pub sentiment: String,
    pub privacy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the canonical JSON of `config` and `backends`.
    pub config_hash: String,
    pub seed: u64,
    pub backends: BackendNames,
    pub config: AuditConfig,
    pub vocabulary_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub source: String,
    pub reviews: usize,
    pub empty_reviews: usize,
    /// Keyed `n1` .. `n5`; orders with no n-grams are listed in `skipped`.
    pub lexical: Option<BTreeMap<String, NgramStats>>,
    pub semantic: Option<SemanticReport>,
    pub sentiment: Option<SentimentProfile>,
    pub privacy: Option<ContentPrivacyStats>,
    pub outliers: Option<OutlierReport>,
    /// Block (or lexical order) name to the reason it has no value.
    pub skipped: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl MetricReport {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Every scalar metric in a fixed order; `None` where the block was skipped.
    pub fn scalar_rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![
            ("reviews".to_string(), Some(self.reviews as f64)),
            ("empty_reviews".to_string(), Some(self.empty_reviews as f64)),
        ];
        for n in 1..=MAX_N {
            let stats = self.lexical.as_ref().and_then(|l| l.get(&format!("n{n}")));
            rows.push((format!("lexical.n{n}.L_r"), stats.map(|s| s.uniqueness_ratio)));
            rows.push((format!("lexical.n{n}.H_n"), stats.map(|s| s.normalized_entropy)));
        }
        let sem = self.semantic.as_ref();
        rows.push(("semantic.ratio".into(), sem.map(|s| s.ratio)));
        rows.push(("semantic.avg_mst_edge".into(), sem.map(|s| s.avg_mst_edge)));
        rows.push(("semantic.components".into(), sem.map(|s| s.components as f64)));
        rows.push((
            "semantic.excluded_reviews".into(),
            sem.map(|s| s.excluded_reviews as f64),
        ));
        let sen = self.sentiment.as_ref();
        for r in 0..5 {
            rows.push((format!("sentiment.y{}", r + 1), sen.and_then(|s| s.y[r])));
        }
        rows.push(("sentiment.d_sen".into(), sen.map(|s| s.d_sen)));
        let p = self.privacy.as_ref();
        type Field = fn(&ContentPrivacyStats) -> f64;
        let privacy_fields: [(&str, Field); 8] = [
            ("mean_entity_count", |p| p.mean_entity_count),
            ("max_entity_count", |p| p.max_entity_count),
            ("mean_entity_density", |p| p.mean_entity_density),
            ("max_entity_density", |p| p.max_entity_density),
            ("mean_nominal_count", |p| p.mean_nominal_count),
            ("max_nominal_count", |p| p.max_nominal_count),
            ("mean_nominal_density", |p| p.mean_nominal_density),
            ("max_nominal_density", |p| p.max_nominal_density),
        ];
        for (name, f) in privacy_fields {
            rows.push((format!("privacy.{name}"), p.map(f)));
        }
        let o = self.outliers.as_ref();
        rows.push(("outliers.count".into(), o.map(|o| o.count as f64)));
        rows.push(("outliers.candidates".into(), o.map(|o| o.candidates as f64)));
        rows.push(("outliers.d_nn_p01".into(), o.and_then(|o| o.d_nn_p01)));
        rows
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalar_rows()
            .into_iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v)
    }
}

/// A report plus the intermediate results callers may want to export.
#[derive(Debug)]
pub struct AuditOutcome {
    pub report: MetricReport,
    pub outliers: Option<OutlierAnalysis>,
    /// Errors behind each skipped block, for exit-code decisions.
    pub failures: Vec<(String, Error)>,
}

impl AuditOutcome {
    pub fn has_backend_failure(&self) -> bool {
        self.failures.iter().any(|(_, e)| e.is_backend())
    }
}

fn config_hash(config: &AuditConfig, backends: &BackendNames) -> String {
    let canonical = serde_json::to_string(&(config, backends)).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

struct Timer {
    enabled: bool,
    laps: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.enabled {
            self.laps.insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
        }
        out
    }
}

/// Trains the word model on the corpus and embeds every review, as the
/// audit does.
pub fn embed_corpus(corpus: &Corpus, config: &AuditConfig) -> Result<(EmbeddingModel, Vec<Option<Vector>>)> {
    config.validate()?;
    let preprocessor = Preprocessor::new(stopword_set(config.stopwords.as_deref())?);
    let content: Vec<Vec<String>> = corpus
        .reviews
        .par_iter()
        .map(|r| preprocessor.tokenize(&r.text).tokens_content)
        .collect();
    let model = train_word_embeddings(&content, &config.effective_embedding())?;
    let vectors = content.par_iter().map(|t| embed_review(&model, t)).collect();
    Ok((model, vectors))
}

/// Audit with the lexicon sentiment classifier and rule-based extractor.
pub fn audit(corpus: &Corpus, config: &AuditConfig) -> Result<AuditOutcome> {
    audit_with(corpus, config, &LexiconClassifier::default(), &RuleExtractor::default())
}

/// Runs every metric family. A family that fails is recorded in `skipped`
/// and the others still run; only invalid configuration aborts.
pub fn audit_with(
    corpus: &Corpus,
    config: &AuditConfig,
    sentiment: &dyn SentimentClassifier,
    privacy: &dyn MentionExtractor,
) -> Result<AuditOutcome> {
    config.validate()?;
    let preprocessor = Preprocessor::new(stopword_set(config.stopwords.as_deref())?);
    let mut timer = Timer {
        enabled: config.record_timings,
        laps: BTreeMap::new(),
    };
    let mut skipped = BTreeMap::new();
    let mut failures = Vec::new();
    let mut skip = |name: &str, err: Error| {
        skipped.insert(name.to_string(), err.to_string());
        failures.push((name.to_string(), err));
    };

    let content: Vec<Vec<String>> = timer.time("preprocess", || {
        corpus
            .reviews
            .par_iter()
            .map(|r| preprocessor.tokenize(&r.text).tokens_content)
            .collect()
    });

    let lexical = timer.time("lexical", || {
        let mut block = BTreeMap::new();
        for n in 1..=MAX_N {
            match ngram_stats(&content, n) {
                Ok(s) => {
                    block.insert(format!("n{n}"), s);
                }
                Err(e) => skip(&format!("lexical.n{n}"), e),
            }
        }
        block
    });
    let lexical = (!lexical.is_empty()).then_some(lexical);

    let embedding_config = config.effective_embedding();
    let model = timer.time("embedding", || train_word_embeddings(&content, &embedding_config));
    let (review_vectors, vocabulary_size): (Option<Vec<Option<Vector>>>, Option<usize>) = match model {
        Ok(model) => {
            let vs = content.par_iter().map(|t| embed_review(&model, t)).collect();
            (Some(vs), Some(model.vocab_size()))
        }
        Err(e) => {
            let reason = e.to_string();
            skip("semantic", Error::undefined("semantic", reason.clone()));
            skip("outliers", Error::undefined("outliers", reason));
            (None, None)
        }
    };

    let mut semantic = None;
    let mut outlier_analysis = None;
    if let Some(vs) = &review_vectors {
        match timer.time("semantic", || semantic_report(vs, &config.semantic)) {
            Ok(r) => semantic = Some(r),
            Err(e) => skip("semantic", e),
        }
        match timer.time("outliers", || detect_outliers(corpus, vs, &config.outliers)) {
            Ok(a) => outlier_analysis = Some(a),
            Err(e) => skip("outliers", e),
        }
    }

    let sentiment_block = match timer.time("sentiment", || {
        segment_positive_rates(corpus, sentiment, config.allow_empty_segments, LINEAR_BENCHMARK)
    }) {
        Ok(p) => Some(p),
        Err(e) => {
            skip("sentiment", e);
            None
        }
    };

    let privacy_block = match timer.time("privacy", || content_privacy_stats(corpus, privacy)) {
        Ok(p) => Some(p),
        Err(e) => {
            skip("privacy", e);
            None
        }
    };

    let backends = BackendNames {
        sentiment: sentiment.name().to_string(),
        privacy: privacy.name().to_string(),
    };
    let report = MetricReport {
        source: corpus.source_label.clone(),
        reviews: corpus.len(),
        empty_reviews: corpus.empty_review_count(),
        lexical,
        semantic,
        sentiment: sentiment_block,
        privacy: privacy_block,
        outliers: outlier_analysis.as_ref().map(|a| a.report.clone()),
        skipped,
        provenance: Provenance {
            tool: "corpus-audit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(config, &backends),
            seed: config.seed,
            backends,
            config: config.clone(),
            vocabulary_size,
            timings_ms: config.record_timings.then_some(timer.laps),
        },
    };
    Ok(AuditOutcome {
        report,
        outliers: outlier_analysis,
        failures,
    })
}

/// Rows of the cross-dataset comparison, in display order.
pub const COMPARISON_ROWS: &[&str] = &[
    "lexical.n1.L_r",
    "lexical.n1.H_n",
    "lexical.n2.L_r",
    "lexical.n2.H_n",
    "lexical.n3.L_r",
    "lexical.n3.H_n",
    "lexical.n4.L_r",
    "lexical.n4.H_n",
    "lexical.n5.L_r",
    "lexical.n5.H_n",
    "semantic.avg_mst_edge",
    "semantic.ratio",
    "sentiment.d_sen",
    "privacy.mean_entity_count",
    "privacy.mean_nominal_count",
    "privacy.mean_entity_density",
    "privacy.mean_nominal_density",
    "outliers.count",
    "outliers.d_nn_p01",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    /// Metric name and one value per column.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

/// Metrics as rows, datasets as columns in input order, followed by the
/// difference of every later dataset to the first.
pub fn compare(reports: &[(&str, &MetricReport)]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::Precondition("compare needs at least two reports".into()));
    }
    let rows = COMPARISON_ROWS
        .iter()
        .map(|name| {
            let values = reports.iter().map(|(_, r)| r.scalar(name)).collect();
            (name.to_string(), values)
        })
        .collect();
    Ok(ComparisonTable {
        columns: reports.iter().map(|(n, _)| n.to_string()).collect(),
        rows,
    })
}

fn format_value(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.6}");
        if s.trim_end_matches('0').trim_end_matches('.') == "0" || s.trim_end_matches('0').trim_end_matches('.') == "-0"
        {
            format!("{v:.3e}")
        } else {
            s
        }
    }
}

impl ComparisonTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["metric".to_string()];
        h.extend(self.columns.iter().cloned());
        for c in &self.columns[1..] {
            h.push(format!("Δ {} − {}", c, self.columns[0]));
        }
        h
    }

    fn cells(&self, values: &[Option<f64>], exact: bool) -> Vec<String> {
        let fmt = |v: Option<f64>| match v {
            Some(x) if exact => x.to_string(),
            Some(x) => format_value(x),
            None => MISSING_CELL.to_string(),
        };
        let mut out: Vec<String> = values.iter().map(|v| fmt(*v)).collect();
        for v in &values[1..] {
            out.push(fmt(match (v, values[0]) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            }));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(self.header()).expect("in-memory write");
        for (name, values) in &self.rows {
            let mut rec = vec![name.clone()];
            rec.extend(self.cells(values, true));
            wtr.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n", header.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for (name, values) in &self.rows {
            let mut rec = vec![format!("`{name}`")];
            rec.extend(self.cells(values, false));
            out.push_str(&format!("| {} |\n", rec.join(" | ")));
        }
        out
    }
}

/// Positive rate per rating next to the linear benchmark.
pub fn sentiment_curve_csv(profile: &SentimentProfile) -> String {
    let mut out = String::from("rating,positive_rate,benchmark,reviews\n");
    for i in 0..5 {
        let y = profile.y[i].map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            y,
            profile.benchmark[i],
            profile.segment_counts[i]
        ));
    }
    out
}
