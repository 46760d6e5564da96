//! `corpus-audit` command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 input schema error, 3 backend
//! error (adapter or completion endpoint).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use corpus_audit::adapter::{AdapterClient, DEFAULT_TIMEOUT};
use corpus_audit::outliers::{detect_outliers, write_d_nn_curve};
use corpus_audit::privacy::{write_spans_jsonl, MentionExtractor, RuleExtractor};
use corpus_audit::prompt::{
    run_loop, CompletionBackend, GenerationConfig, HttpBackend, MockBackend, MockBehavior, COMPLETION_URL_ENV,
};
use corpus_audit::report::{audit_with, embed_corpus, sentiment_curve_csv};
use corpus_audit::semantic::MstSelection;
use corpus_audit::sentiment::{LexiconClassifier, SentimentClassifier};
use corpus_audit::synth::{synthetic_corpus, SynthConfig};
use corpus_audit::{
    compare, load_corpus, load_report, write_corpus_csv, write_report, AuditConfig, Corpus, CorpusFormat, ReportFormat,
};

#[derive(Parser)]
#[command(
    name = "corpus-audit",
    version,
    about = "Diversity and privacy audit for review corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute every metric family for one corpus.
    Audit(AuditArgs),
    /// Side-by-side table of two or more JSON reports.
    Compare(CompareArgs),
    /// Run the prompt-refinement loop against a completion backend.
    Generate(GenerateArgs),
    /// Outlier detection only, with the sorted d_nn curve as CSV.
    Outliers(OutlierArgs),
    /// Train the word model and save it as text.
    Embed(EmbedArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mst {
    Exact,
    Knn,
    Auto,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SentimentBackend {
    Lexicon,
    Adapter,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrivacyBackend {
    Rules,
    Adapter,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenBackend {
    Mock,
    Http,
}

#[derive(clap::Args)]
struct CorpusArgs {
    /// Review file: CSV with user_id,rating,review or JSONL.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// TOML file with audit settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
}

impl CorpusArgs {
    fn config(&self) -> Result<AuditConfig> {
        let mut cfg = match &self.config {
            Some(p) => AuditConfig::load(p)?,
            None => AuditConfig::default(),
        };
        if let Some(p) = &self.stopwords {
            cfg.stopwords = Some(p.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.dim {
            cfg.embedding.dimension = d;
        }
        if let Some(e) = self.epochs {
            cfg.embedding.epochs = e;
        }
        if let Some(w) = self.window {
            cfg.embedding.window = w;
        }
        Ok(cfg)
    }

    fn corpus(&self) -> Result<Corpus> {
        Ok(load_corpus(&self.input, CorpusFormat::from_path(&self.input))?)
    }
}

#[derive(clap::Args)]
struct AuditArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: OutFormat,
    #[arg(long, value_enum)]
    mst: Option<Mst>,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    theta_g: Option<f64>,
    #[arg(long)]
    theta_l: Option<f64>,
    #[arg(long, value_enum, default_value = "lexicon")]
    sentiment_backend: SentimentBackend,
    #[arg(long, value_enum, default_value = "rules")]
    privacy_backend: PrivacyBackend,
    /// Adapter command (stdio); otherwise ADAPTER_URL is used.
    #[arg(long)]
    adapter_cmd: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
    adapter_timeout_secs: u64,
    /// Report y_r even when some rating has no reviews.
    #[arg(long)]
    allow_empty_segments: bool,
    /// Record per-stage wall-clock times in provenance.
    #[arg(long)]
    timings: bool,
    /// Also write the per-rating positive-rate curve as CSV.
    #[arg(long, value_name = "FILE")]
    sentiment_curve: Option<PathBuf>,
    /// Also write per-review mention spans as JSONL.
    #[arg(long, value_name = "FILE")]
    spans: Option<PathBuf>,
    /// Also write the sorted d_nn curve as CSV.
    #[arg(long, value_name = "FILE")]
    d_nn_curve: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "md")]
    format: TableFormat,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "mock")]
    backend: GenBackend,
    /// Accumulated dataset as JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Per-cycle verdicts and the final prompt as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_cycles: Option<u32>,
}

#[derive(clap::Args)]
struct OutlierArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Sorted d_nn curve.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    theta_g: Option<f64>,
    #[arg(long)]
    theta_l: Option<f64>,
}

#[derive(clap::Args)]
struct EmbedArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    reviews: usize,
    #[arg(long, default_value_t = 400)]
    users: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Outliers(a) => cmd_outliers(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<corpus_audit::Error>() {
            if e.is_schema() {
                return 2;
            }
            if e.is_backend() {
                return 3;
            }
        }
    }
    1
}

fn adapter(cmd: Option<&str>, timeout_secs: u64) -> Result<AdapterClient> {
    match AdapterClient::from_settings(cmd, Duration::from_secs(timeout_secs))? {
        Some(client) => Ok(client),
        None => Err(corpus_audit::Error::Backend(
            "adapter backend needs --adapter-cmd or the ADAPTER_URL environment variable".into(),
        )
        .into()),
    }
}

fn cmd_audit(a: AuditArgs) -> Result<ExitCode> {
    let mut cfg = a.corpus.config()?;
    if let Some(m) = a.mst {
        cfg.semantic.selection = match m {
            Mst::Exact => MstSelection::Exact,
            Mst::Knn => MstSelection::Knn,
            Mst::Auto => MstSelection::Auto,
        };
    }
    if let Some(k) = a.knn_k {
        cfg.semantic.k = k;
    }
    if let Some(t) = a.theta_g {
        cfg.outliers.theta_g = t;
    }
    if let Some(t) = a.theta_l {
        cfg.outliers.theta_l = t;
    }
    cfg.allow_empty_segments |= a.allow_empty_segments;
    cfg.record_timings |= a.timings;
    let corpus = a.corpus.corpus()?;

    let needs_adapter =
        a.sentiment_backend == SentimentBackend::Adapter || a.privacy_backend == PrivacyBackend::Adapter;
    let client = if needs_adapter {
        Some(adapter(a.adapter_cmd.as_deref(), a.adapter_timeout_secs)?)
    } else {
        None
    };
    let lexicon = LexiconClassifier::default();
    let rules = RuleExtractor::default();
    let sentiment: &dyn SentimentClassifier = match (a.sentiment_backend, &client) {
        (SentimentBackend::Adapter, Some(c)) => c,
        _ => &lexicon,
    };
    let privacy: &dyn MentionExtractor = match (a.privacy_backend, &client) {
        (PrivacyBackend::Adapter, Some(c)) => c,
        _ => &rules,
    };

    let outcome = audit_with(&corpus, &cfg, sentiment, privacy)?;
    let format = match a.format {
        OutFormat::Json => ReportFormat::Json,
        OutFormat::Csv => ReportFormat::Csv,
    };
    write_report(&outcome.report, &a.out, format)?;
    for (block, reason) in &outcome.report.skipped {
        eprintln!("skipped {block}: {reason}");
    }
    if let Some(path) = &a.sentiment_curve {
        match &outcome.report.sentiment {
            Some(p) => write_file(path, &sentiment_curve_csv(p))?,
            None => eprintln!("no sentiment curve: sentiment was skipped"),
        }
    }
    if let Some(path) = &a.d_nn_curve {
        match &outcome.outliers {
            Some(analysis) => write_d_nn_curve(analysis, path)?,
            None => eprintln!("no d_nn curve: outliers were skipped"),
        }
    }
    if let Some(path) = &a.spans {
        write_spans_jsonl(&corpus, privacy, path)?;
    }
    if outcome.has_backend_failure() {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_compare(a: CompareArgs) -> Result<ExitCode> {
    let mut loaded = Vec::new();
    for path in &a.reports {
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report")
            .to_string();
        loaded.push((label, load_report(path)?));
    }
    let refs: Vec<(&str, &corpus_audit::MetricReport)> = loaded.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let table = compare(&refs)?;
    let text = match a.format {
        TableFormat::Csv => table.to_csv(),
        TableFormat::Md => table.to_markdown(),
    };
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let mut cfg = GenerationConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_cycles {
        cfg.max_cycles = m;
    }
    let mut backend: Box<dyn CompletionBackend> = match a.backend {
        GenBackend::Mock => Box::new(MockBackend::new(MockBehavior::Obedient, cfg.seed)),
        GenBackend::Http => {
            let url = cfg
                .endpoint
                .url
                .clone()
                .or_else(|| std::env::var(COMPLETION_URL_ENV).ok().filter(|u| !u.trim().is_empty()));
            let Some(url) = url else {
                bail!(corpus_audit::Error::Backend(format!(
                    "http backend needs endpoint.url in the config or {COMPLETION_URL_ENV}"
                )));
            };
            Box::new(HttpBackend::new(&url, Duration::from_secs(cfg.endpoint.timeout_secs)))
        }
    };
    let outcome = run_loop(backend.as_mut(), &cfg)?;
    outcome.write_jsonl(&a.out)?;
    if let Some(log) = &a.log {
        let doc = serde_json::json!({
            "thresholds": outcome.thresholds,
            "cycles": outcome.cycles,
            "final_prompt": corpus_audit::prompt::render_prompt(&outcome.final_state),
            "aborted": outcome.aborted,
        });
        write_file(log, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    for c in &outcome.cycles {
        let failed: Vec<&str> = match &c.verdicts {
            Some(v) => v.failed().into_iter().map(|m| m.name()).collect(),
            None => vec!["format"],
        };
        eprintln!(
            "cycle {}: {} reviews, failed [{}]",
            c.cycle,
            c.parsed_reviews,
            failed.join(", ")
        );
    }
    if let Some(reason) = &outcome.aborted {
        eprintln!("stopped early: {reason}");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_outliers(a: OutlierArgs) -> Result<ExitCode> {
    let mut cfg = a.corpus.config()?;
    if let Some(t) = a.theta_g {
        cfg.outliers.theta_g = t;
    }
    if let Some(t) = a.theta_l {
        cfg.outliers.theta_l = t;
    }
    let corpus = a.corpus.corpus()?;
    let (_, vectors) = embed_corpus(&corpus, &cfg)?;
    let analysis = detect_outliers(&corpus, &vectors, &cfg.outliers)?;
    write_d_nn_curve(&analysis, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&analysis.report)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_embed(a: EmbedArgs) -> Result<ExitCode> {
    let cfg = a.corpus.config()?;
    let corpus = a.corpus.corpus()?;
    let (model, _) = embed_corpus(&corpus, &cfg)?;
    model.save_text(&a.out)?;
    eprintln!("{} words, dimension {}", model.vocab_size(), model.dimension());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    let corpus = synthetic_corpus(&SynthConfig {
        reviews: a.reviews,
        users: a.users,
        seed: a.seed,
        ..SynthConfig::default()
    });
    write_corpus_csv(&corpus, &a.out)?;
    Ok(ExitCode::SUCCESS)
}
