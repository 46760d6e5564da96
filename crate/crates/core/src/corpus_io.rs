//! Review datasets and report persistence.
//!
//! Corpora come in as CSV (RFC 4180, header `user_id,rating,review`) or JSON
//! Lines with the same three keys. Reports go out as JSON (lossless) or as a
//! flat `metric,value` CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::report::MetricReport;

pub const CSV_COLUMNS: [&str; 3] = ["user_id", "rating", "review"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub user_id: String,
    pub rating: u8,
    pub text: String,
}

impl Review {
    pub fn new(user_id: impl Into<String>, rating: u8, text: impl Into<String>) -> Result<Self> {
        let user_id = user_id.into();
        if user_id.is_empty() {
            return Err(Error::Precondition("user_id must be non-empty".into()));
        }
        if !(1..=5).contains(&rating) {
            return Err(Error::Precondition(format!("rating {rating} outside 1..=5")));
        }
        Ok(Review {
            user_id,
            rating,
            text: text.into(),
        })
    }

    /// Empty reviews are kept but flagged; each metric decides whether to skip them.
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub source_label: String,
    pub reviews: Vec<Review>,
}

impl Corpus {
    pub fn new(source_label: impl Into<String>, reviews: Vec<Review>) -> Self {
        Corpus {
            source_label: source_label.into(),
            reviews,
        }
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn empty_review_count(&self) -> usize {
        self.reviews.iter().filter(|r| r.is_empty()).count()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.reviews.iter().map(|r| r.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from the file extension; anything that is not `.jsonl`/`.ndjson` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    let reviews = match format {
        CorpusFormat::Csv => read_csv_reviews(BufReader::new(file))?,
        CorpusFormat::Jsonl => read_jsonl_reviews(BufReader::new(file), path)?,
    };
    Ok(Corpus::new(label, reviews))
}

pub fn read_csv_reviews<R: std::io::Read>(reader: R) -> Result<Vec<Review>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    let mut idx = [0usize; 3];
    for (slot, column) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::MissingColumn {
                column: column.to_string(),
            })?;
    }

    let mut reviews = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let rating = parse_rating_str(field(1)).map_err(|message| Error::Record { line, message })?;
        reviews.push(build_review(field(0), rating, field(2), line)?);
    }
    Ok(reviews)
}

fn csv_error(err: csv::Error, fallback_line: u64) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(fallback_line);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<csv>".into(),
            source,
        },
        other => Error::Record {
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn read_jsonl_reviews<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Review>> {
    let mut reviews = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            message: format!("invalid JSON: {e}"),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Record {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        for column in CSV_COLUMNS {
            if !obj.contains_key(column) {
                return Err(Error::MissingColumn {
                    column: column.to_string(),
                });
            }
        }
        let user_id = match &obj["user_id"] {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::Record {
                    line: line_no,
                    message: format!("user_id must be a string, got {other}"),
                })
            }
        };
        let rating = parse_rating_value(&obj["rating"]).map_err(|message| Error::Record { line: line_no, message })?;
        let text = match &obj["review"] {
            Value::String(s) => s.as_str(),
            Value::Null => {
                return Err(Error::Record {
                    line: line_no,
                    message: "review text is null".into(),
                })
            }
            other => {
                return Err(Error::Record {
                    line: line_no,
                    message: format!("review must be a string, got {other}"),
                })
            }
        };
        reviews.push(build_review(&user_id, rating, text, line_no)?);
    }
    Ok(reviews)
}

fn build_review(user_id: &str, rating: u8, text: &str, line: u64) -> Result<Review> {
    let user_id = user_id.trim();
    if user_id.is_empty() {
        return Err(Error::Record {
            line,
            message: "empty user_id".into(),
        });
    }
    Ok(Review {
        user_id: user_id.to_string(),
        rating,
        text: text.to_string(),
    })
}

/// Accepts `5` and `5.0`; anything fractional or outside 1..=5 is rejected.
pub fn parse_rating_str(raw: &str) -> std::result::Result<u8, String> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return check_rating(v as f64, raw);
    }
    match raw.parse::<f64>() {
        Ok(v) => check_rating(v, raw),
        Err(_) => Err(format!("rating {raw:?} is not a number")),
    }
}

fn parse_rating_value(value: &Value) -> std::result::Result<u8, String> {
    match value {
        Value::Number(n) => match n.as_f64() {
            Some(v) => check_rating(v, &n.to_string()),
            None => Err(format!("rating {n} is not representable")),
        },
        Value::String(s) => parse_rating_str(s),
        other => Err(format!("rating must be a number, got {other}")),
    }
}

fn check_rating(v: f64, raw: &str) -> std::result::Result<u8, String> {
    if !v.is_finite() || v.fract() != 0.0 {
        return Err(format!("rating {raw:?} is not an integer"));
    }
    if !(1.0..=5.0).contains(&v) {
        return Err(format!("rating {raw:?} outside 1..=5"));
    }
    Ok(v as u8)
}

/// Writes `user_id,rating,review` rows that `load_corpus` reads back unchanged.
pub fn write_corpus_csv(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    wtr.write_record(CSV_COLUMNS).map_err(|e| csv_write_error(e, path))?;
    for r in &corpus.reviews {
        wtr.write_record([r.user_id.as_str(), &r.rating.to_string(), r.text.as_str()])
            .map_err(|e| csv_write_error(e, path))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn write_report(report: &MetricReport, path: &Path, format: ReportFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Json => {
            out.write_all(report.to_json_pretty().as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        ReportFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(&mut out);
            wtr.write_record(["metric", "value"])
                .map_err(|e| csv_write_error(e, path))?;
            for (name, value) in report.scalar_rows() {
                let cell = value.map(|v| v.to_string()).unwrap_or_default();
                wtr.write_record([name.as_str(), cell.as_str()])
                    .map_err(|e| csv_write_error(e, path))?;
            }
            wtr.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn csv_write_error(err: csv::Error, path: &Path) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Report(format!("{other:?}")),
    }
}

pub fn load_report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn csv(text: &str) -> Result<Vec<Review>> {
        read_csv_reviews(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn csv_rows_load_in_order() {
        let reviews = csv("user_id,rating,review\nu1,5,great\nu2,1,awful\nu3,3,meh\n").unwrap();
        assert_eq!(reviews.len(), 3);
        assert_eq!(reviews[0], Review::new("u1", 5, "great").unwrap());
        assert_eq!(reviews[2].user_id, "u3");
    }

    #[test]
    fn rating_six_is_a_record_error_at_its_line() {
        let err = csv("user_id,rating,review\nu1,5,ok\nu2,6,bad\n").unwrap_err();
        match err {
            Error::Record { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let err = csv("user_id,stars,review\nu1,5,ok\n").unwrap_err();
        match err {
            Error::MissingColumn { column } => assert_eq!(column, "rating"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ratings_accept_integer_floats_only() {
        assert_eq!(parse_rating_str("5.0"), Ok(5));
        assert_eq!(parse_rating_str(" 2 "), Ok(2));
        assert!(parse_rating_str("4.5").is_err());
        assert!(parse_rating_str("0").is_err());
        assert!(parse_rating_str("five").is_err());
    }

    #[test]
    fn quoted_newlines_survive() {
        let reviews = csv("user_id,rating,review\nu1,4,\"line one\nline two, with comma\"\nu2,2,x\n").unwrap();
        assert_eq!(reviews[0].text, "line one\nline two, with comma");
        assert_eq!(reviews.len(), 2);
    }

    #[test]
    fn empty_text_is_accepted_and_flagged() {
        let reviews = csv("user_id,rating,review\nu1,4,\"\"\n").unwrap();
        assert!(reviews[0].is_empty());
    }

    #[test]
    fn jsonl_line_loads() {
        let src = "{\"user_id\":\"u1\",\"rating\":5,\"review\":\"ok\"}\n\n{\"user_id\":\"u2\",\"rating\":\"2.0\",\"review\":\"meh\"}\n";
        let reviews = read_jsonl_reviews(Cursor::new(src), Path::new("x.jsonl")).unwrap();
        assert_eq!(reviews[0], Review::new("u1", 5, "ok").unwrap());
        assert_eq!(reviews[1].rating, 2);
    }

    #[test]
    fn jsonl_missing_key_is_schema_error() {
        let src = "{\"user_id\":\"u1\",\"review\":\"ok\"}\n";
        let err = read_jsonl_reviews(Cursor::new(src), Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column } if column == "rating"));
    }

    #[test]
    fn jsonl_bad_rating_reports_line() {
        let src = "{\"user_id\":\"u1\",\"rating\":5,\"review\":\"ok\"}\n{\"user_id\":\"u1\",\"rating\":3.5,\"review\":\"ok\"}\n";
        let err = read_jsonl_reviews(Cursor::new(src), Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }));
    }

    #[test]
    fn loading_twice_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "user_id,rating,review\nu1,5,a b\nu2,4,c\n").unwrap();
        let a = load_corpus(&path, CorpusFormat::Csv).unwrap();
        let b = load_corpus(&path, CorpusFormat::Csv).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source_label, "c");
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/x.csv"), CorpusFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn corpus_csv_round_trip() {
        let corpus = Corpus::new(
            "rt",
            vec![
                Review::new("u,1", 5, "Love it, \"really\"\nsecond line").unwrap(),
                Review::new("u2", 1, "").unwrap(),
            ],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_corpus_csv(&corpus, &path).unwrap();
        let back = load_corpus(&path, CorpusFormat::Csv).unwrap();
        assert_eq!(back.reviews, corpus.reviews);
    }
}
