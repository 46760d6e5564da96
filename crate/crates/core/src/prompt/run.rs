//! Loop configuration, the accumulated dataset, and the loop itself.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::CompletionBackend;
use super::evaluate::{evaluate_batch, EvalSettings, LengthTargets, MetricVerdicts, Thresholds};
use super::parse::parse_completion;
use super::{base_template, render_prompt, update_prompt, InstructionPools, Metric, PromptState};
use crate::corpus_io::{load_corpus, Corpus, CorpusFormat};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};

/// Where pass bars come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// The configured numbers.
    #[default]
    Absolute,
    /// Lexical, semantic and sentiment bars are the scores of a
    /// batch-sized sample of `reference_corpus`.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Falls back to the `COMPLETION_URL` environment variable.
    pub url: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub batch_size: usize,
    pub max_cycles: u32,
    /// Stop after this many consecutive all-pass cycles; 0 never stops early.
    pub all_pass_streak: u32,
    pub seed: u64,
    /// Bundled base template (1 or 2), unless `template` is set.
    pub prompt_level: u8,
    pub template: Option<PathBuf>,
    /// Review file to draw prompt examples from.
    pub examples: Option<PathBuf>,
    pub example_count: usize,
    /// Directory of `<metric>.txt` instruction pools.
    pub pools_dir: Option<PathBuf>,
    pub threshold_mode: ThresholdMode,
    pub reference_corpus: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub length: LengthTargets,
    pub embedding: EmbeddingConfig,
    pub endpoint: EndpointConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            batch_size: 20,
            max_cycles: 10,
            all_pass_streak: 2,
            seed: 42,
            prompt_level: 1,
            template: None,
            examples: None,
            example_count: 5,
            pools_dir: None,
            threshold_mode: ThresholdMode::Absolute,
            reference_corpus: None,
            thresholds: Thresholds::default(),
            length: LengthTargets::default(),
            embedding: EmbeddingConfig::default(),
            endpoint: EndpointConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Relative paths in the file are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.template,
            &mut cfg.examples,
            &mut cfg.pools_dir,
            &mut cfg.reference_corpus,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.length.validate()?;
        self.embedding.validate()?;
        if self.threshold_mode == ThresholdMode::Reference && self.reference_corpus.is_none() {
            return Err(Error::Config(
                "threshold_mode = \"reference\" needs reference_corpus".into(),
            ));
        }
        Ok(())
    }

    fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            thresholds: self.thresholds,
            length: self.length,
            embedding: EmbeddingConfig {
                rng_seed: self.seed,
                ..self.embedding.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedReview {
    pub cycle: u32,
    pub user_id: String,
    pub rating: u8,
    pub review: String,
}

/// Everything generated so far. Batches are only ever appended.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccumulatedDataset {
    pub reviews: Vec<GeneratedReview>,
}

impl AccumulatedDataset {
    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    fn append(&mut self, cycle: u32, batch: &Corpus) {
        self.reviews.extend(batch.reviews.iter().map(|r| GeneratedReview {
            cycle,
            user_id: r.user_id.clone(),
            rating: r.rating,
            review: r.text.clone(),
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    pub parsed_reviews: usize,
    pub dropped_rows: usize,
    /// Set when no row could be parsed.
    pub parse_error: Option<String>,
    pub verdicts: Option<MetricVerdicts>,
}

impl CycleRecord {
    fn failed_metrics(&self) -> Vec<&'static str> {
        match &self.verdicts {
            Some(v) => v.failed().into_iter().map(Metric::name).collect(),
            None => vec![Metric::Format.name()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub dataset: AccumulatedDataset,
    pub cycles: Vec<CycleRecord>,
    pub final_state: PromptState,
    pub thresholds: Thresholds,
    /// Set when the backend failed and the loop stopped early.
    pub aborted: Option<String>,
}

impl LoopOutcome {
    /// One JSON object per review with its cycle and that cycle's failed
    /// checks. Loadable as a review corpus.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            cycle: u32,
            user_id: &'a str,
            rating: u8,
            review: &'a str,
            failed: Vec<&'static str>,
        }
        let mut out = Vec::new();
        for r in &self.dataset.reviews {
            let failed = self
                .cycles
                .iter()
                .find(|c| c.cycle == r.cycle)
                .map(CycleRecord::failed_metrics)
                .unwrap_or_default();
            let line = Line {
                cycle: r.cycle,
                user_id: &r.user_id,
                rating: r.rating,
                review: &r.review,
                failed,
            };
            serde_json::to_writer(&mut out, &line).expect("line serializes");
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

fn example_rows(config: &GenerationConfig) -> Result<String> {
    let Some(path) = &config.examples else {
        return Ok(String::new());
    };
    let corpus = load_corpus(path, CorpusFormat::from_path(path))?;
    let mut picked: Vec<_> = corpus.reviews.iter().filter(|r| !r.is_empty()).collect();
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    picked.truncate(config.example_count);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in picked {
        wtr.write_record([format!("{}.0", r.rating), r.text.clone(), r.user_id.clone()])
            .expect("in-memory write");
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv"))
}

/// Scores of a seeded batch-sized sample of the reference corpus.
fn reference_thresholds(config: &GenerationConfig, settings: &EvalSettings) -> Result<Thresholds> {
    let path = config
        .reference_corpus
        .as_ref()
        .ok_or_else(|| Error::Config("reference_corpus is not set".into()))?;
    let corpus = load_corpus(path, CorpusFormat::from_path(path))?;
    let mut sample = corpus.reviews.clone();
    sample.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    sample.truncate(config.batch_size);
    let sample = Corpus::new("reference", sample);
    if sample.is_empty() {
        return Err(Error::Config(format!("reference corpus {} is empty", path.display())));
    }
    let v = evaluate_batch(&sample, &AccumulatedDataset::default(), settings)?;
    let mut t = settings.thresholds;
    let score = |m: Metric, fallback: f64| v.get(m).and_then(|x| x.score).unwrap_or(fallback);
    t.lexical_unigram_lr = score(Metric::Lexical, t.lexical_unigram_lr);
    t.semantic_avg_mst_edge = score(Metric::Semantic, t.semantic_avg_mst_edge);
    t.sentiment_d_sen = score(Metric::Sentiment, t.sentiment_d_sen);
    Ok(t)
}

/// Generates, evaluates and re-prompts for up to `max_cycles` cycles.
///
/// Configuration problems are errors. A backend failure ends the loop and
/// returns what was gathered, with `aborted` set.
pub fn run_loop(backend: &mut dyn CompletionBackend, config: &GenerationConfig) -> Result<LoopOutcome> {
    config.validate()?;
    let pools = match &config.pools_dir {
        Some(dir) => InstructionPools::from_dir(dir)?,
        None => InstructionPools::bundled(),
    };
    let template = match &config.template {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => base_template(config.prompt_level)?.to_string(),
    };
    let mut settings = config.eval_settings();
    if config.threshold_mode == ThresholdMode::Reference {
        settings.thresholds = reference_thresholds(config, &settings)?;
    }
    let mut state = PromptState::new(template, config.batch_size).with_examples(example_rows(config)?);
    let mut dataset = AccumulatedDataset::default();
    let mut cycles = Vec::new();
    let mut streak = 0u32;
    let mut aborted = None;

    for cycle in 1..=config.max_cycles {
        let prompt = render_prompt(&state);
        let text = match backend.complete(&prompt) {
            Ok(t) => t,
            Err(e) if e.is_backend() => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let batch = match parse_completion(&text) {
            Ok(b) => b,
            Err(e) => {
                cycles.push(CycleRecord {
                    cycle,
                    parsed_reviews: 0,
                    dropped_rows: 0,
                    parse_error: Some(e.to_string()),
                    verdicts: None,
                });
                state.push_instruction(Metric::Format, &pools)?;
                state.cycle += 1;
                streak = 0;
                continue;
            }
        };
        let corpus = Corpus::new(format!("cycle-{cycle}"), batch.reviews);
        let verdicts = evaluate_batch(&corpus, &dataset, &settings)?;
        dataset.append(cycle, &corpus);
        streak = if verdicts.all_passed() { streak + 1 } else { 0 };
        state = update_prompt(&state, &verdicts, &pools)?;
        cycles.push(CycleRecord {
            cycle,
            parsed_reviews: corpus.len(),
            dropped_rows: batch.dropped_rows,
            parse_error: None,
            verdicts: Some(verdicts),
        });
        if config.all_pass_streak > 0 && streak >= config.all_pass_streak {
            break;
        }
    }
    Ok(LoopOutcome {
        dataset,
        cycles,
        final_state: state,
        thresholds: settings.thresholds,
        aborted,
    })
}
