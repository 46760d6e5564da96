//! Diversity and privacy auditing for review corpora.
//!
//! The audit pipeline tokenizes reviews, trains corpus-local word
//! embeddings, and computes five metric families: lexical n-gram
//! statistics, semantic spread (minimum spanning tree over review vectors),
//! sentiment agreement with star ratings, identifiable-content density, and
//! stylistic outlier users. The [`prompt`] module drives a generation loop
//! that feeds failing metrics back into the prompt.

pub mod adapter;
pub mod corpus_io;
pub mod embedding;
pub mod error;
pub mod lexical;
pub mod outliers;
pub mod preprocess;
pub mod privacy;
pub mod prompt;
pub mod report;
pub mod semantic;
pub mod sentiment;
pub mod synth;
pub mod vecmath;

pub use corpus_io::{
    load_corpus, load_report, write_corpus_csv, write_report, Corpus, CorpusFormat, ReportFormat, Review,
};
pub use error::{Error, Result};
pub use report::{audit, audit_with, compare, AuditConfig, MetricReport};
