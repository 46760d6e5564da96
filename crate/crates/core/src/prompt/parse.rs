//! Turning a completion into review rows.
//!
//! Accepts CSV with a `rating,review,user-id` header (header optional,
//! column order then assumed), or a JSON array of objects, optionally
//! inside a fenced code block. Bad rows are dropped and counted.

use serde_json::Value;

use crate::corpus_io::{parse_rating_str, Review};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedBatch {
    pub reviews: Vec<Review>,
    pub dropped_rows: usize,
}

fn unfence(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let body_start = text[open + 3..]
        .find('\n')
        .map(|i| open + 3 + i + 1)
        .unwrap_or(text.len());
    let body_end = text[body_start..]
        .find("```")
        .map(|i| body_start + i)
        .unwrap_or(text.len());
    &text[body_start..body_end]
}

fn row(rating: &str, review: &str, user: &str) -> Option<Review> {
    let rating = parse_rating_str(rating.trim()).ok()?;
    let review = review.trim();
    let user = user.trim();
    if review.is_empty() || user.is_empty() {
        return None;
    }
    Review::new(user, rating, review).ok()
}

fn field(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match obj.get(*k)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn parse_json(text: &str) -> Option<ParsedBatch> {
    let items: Vec<Value> = serde_json::from_str(text).ok()?;
    let mut out = ParsedBatch {
        reviews: Vec::new(),
        dropped_rows: 0,
    };
    for item in items {
        let parsed = item.as_object().and_then(|obj| {
            row(
                &field(obj, &["rating"])?,
                &field(obj, &["review", "text"])?,
                &field(obj, &["user-id", "user_id", "userId", "user"])?,
            )
        });
        match parsed {
            Some(r) => out.reviews.push(r),
            None => out.dropped_rows += 1,
        }
    }
    Some(out)
}

fn header_index(header: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    header
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_csv(text: &str) -> ParsedBatch {
    let header_line = text.lines().position(|l| {
        let l = l.to_ascii_lowercase();
        l.contains("rating") && l.contains("review")
    });
    let body: String = match header_line {
        Some(i) => text.lines().skip(i).collect::<Vec<_>>().join("\n"),
        None => text.to_string(),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header_line.is_some())
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let (ri, ti, ui) = match header_line {
        Some(_) => {
            let h = rdr.headers().cloned().unwrap_or_default();
            (
                header_index(&h, &["rating"]).unwrap_or(0),
                header_index(&h, &["review", "text"]).unwrap_or(1),
                header_index(&h, &["user-id", "user_id", "userid", "user"]).unwrap_or(2),
            )
        }
        None => (0, 1, 2),
    };
    let mut out = ParsedBatch {
        reviews: Vec::new(),
        dropped_rows: 0,
    };
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            out.dropped_rows += 1;
            continue;
        };
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match (rec.get(ri), rec.get(ti), rec.get(ui)) {
            (Some(r), Some(t), Some(u)) => match row(r, t, u) {
                Some(review) => out.reviews.push(review),
                None => out.dropped_rows += 1,
            },
            _ => out.dropped_rows += 1,
        }
    }
    out
}

/// Fails only when no row at all can be recovered.
pub fn parse_completion(text: &str) -> Result<ParsedBatch> {
    let body = unfence(text).trim();
    let parsed = if body.starts_with('[') {
        parse_json(body).unwrap_or_else(|| parse_csv(body))
    } else {
        parse_csv(body)
    };
    if parsed.reviews.is_empty() {
        return Err(Error::Completion(format!(
            "no valid review rows ({} rejected)",
            parsed.dropped_rows
        )));
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_header_and_quotes() {
        let text = "Here you go:\n\nrating,review,user-id\n5.0,\"Love it, truly\",U1\n2,Too small,U2\n";
        let b = parse_completion(text).unwrap();
        assert_eq!(b.reviews.len(), 2);
        assert_eq!(b.reviews[0].text, "Love it, truly");
        assert_eq!(b.reviews[0].rating, 5);
        assert_eq!(b.reviews[1].user_id, "U2");
    }

    #[test]
    fn reordered_columns_and_fences() {
        let text = "```csv\nuser-id,rating,review\nA,4,Nice\nB,9,Bad rating\nC,3,\n```\nThanks!";
        let b = parse_completion(text).unwrap();
        assert_eq!(b.reviews, vec![Review::new("A", 4, "Nice").unwrap()]);
        assert_eq!(b.dropped_rows, 2);
    }

    #[test]
    fn json_array() {
        let text = r#"[{"rating": 5, "review": "Great", "user-id": "x"}, {"rating": "1.0", "text": "Awful", "user_id": "y"}, 3]"#;
        let b = parse_completion(text).unwrap();
        assert_eq!(b.reviews.len(), 2);
        assert_eq!(b.reviews[1].rating, 1);
        assert_eq!(b.dropped_rows, 1);
    }

    #[test]
    fn headerless_rows() {
        let b = parse_completion("4,Fine shoes,U7\n5,Great,U8").unwrap();
        assert_eq!(b.reviews.len(), 2);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(matches!(
            parse_completion("I cannot help with that."),
            Err(Error::Completion(_))
        ));
        assert!(parse_completion("").is_err());
    }
}
