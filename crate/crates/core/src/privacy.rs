//! Named-entity and nominal-mention counts and densities per review.
//!
//! The rule extractor is a stand-in for a parser-based tagger. It targets the
//! usual sensitive categories in product reviews: names and places,
//! kinship, body measurements, clothing sizes. Densities divide by the
//! review's punctuation-free token count.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus_io::Corpus;
use crate::error::{Error, Result};
use crate::preprocess::{word_tokens, WordToken};

const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "myself",
    "we",
    "us",
    "our",
    "ours",
    "ourselves",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
    "it",
    "its",
    "itself",
    "this",
    "these",
    "those",
    "who",
    "whom",
    "whose",
];

const KINSHIP: &[&str] = &[
    "mother",
    "mom",
    "mum",
    "mommy",
    "father",
    "dad",
    "daddy",
    "parent",
    "parents",
    "son",
    "sons",
    "daughter",
    "daughters",
    "granddaughter",
    "granddaughters",
    "grandson",
    "grandsons",
    "grandchild",
    "grandchildren",
    "grandkid",
    "grandkids",
    "grandma",
    "grandpa",
    "grandmother",
    "grandfather",
    "grandparents",
    "wife",
    "husband",
    "spouse",
    "boyfriend",
    "girlfriend",
    "fiance",
    "fiancé",
    "fiancee",
    "fiancée",
    "brother",
    "brothers",
    "sister",
    "sisters",
    "sibling",
    "siblings",
    "aunt",
    "uncle",
    "niece",
    "nephew",
    "cousin",
    "cousins",
    "kid",
    "kids",
    "child",
    "children",
    "baby",
    "babies",
    "toddler",
    "toddlers",
    "teen",
    "teenager",
    "stepson",
    "stepdaughter",
    "family",
    "hubby",
    "bf",
    "gf",
];

const UNITS: &[&str] = &[
    "lb", "lbs", "pound", "pounds", "kg", "kgs", "kilo", "kilos", "oz", "ounce", "ounces", "ft", "feet", "foot", "in",
    "inch", "inches", "cm", "mm", "m", "g", "grams", "years", "year", "yrs", "yr", "months", "month", "weeks", "days",
    "size", "sizes", "us", "uk", "eu", "percent", "%", "dollars", "bucks", "cup", "waist", "inseam", "tall", "old",
];

const SIZE_TOKENS: &[&str] = &[
    "XXS", "XS", "S", "M", "L", "XL", "XXL", "XXXL", "2XL", "3XL", "4XL", "1X", "2X", "3X", "0X",
];

const MONTHS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

/// Joins two capitalized words into one name: "University of Hawaii".
const NAME_CONNECTORS: &[&str] = &["of", "de", "del", "van", "von", "da"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    pub label: String,
    /// Char offsets into the review text, end exclusive.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Mentions {
    pub entities: Vec<EntitySpan>,
    /// Unique by lowercase surface form, in order of first appearance.
    pub nominals: Vec<String>,
}

pub trait MentionExtractor {
    fn name(&self) -> &str;
    fn extract_batch(&self, texts: &[&str]) -> Result<Vec<Mentions>>;
}

#[derive(Debug, Clone)]
pub struct RuleExtractor {
    pronouns: HashSet<&'static str>,
    kinship: HashSet<&'static str>,
    units: HashSet<&'static str>,
    sizes: HashSet<&'static str>,
    months: HashSet<&'static str>,
}

impl Default for RuleExtractor {
    fn default() -> Self {
        let set = |xs: &[&'static str]| xs.iter().copied().collect::<HashSet<_>>();
        RuleExtractor {
            pronouns: set(PRONOUNS),
            kinship: set(KINSHIP),
            units: set(UNITS),
            sizes: set(SIZE_TOKENS),
            months: set(MONTHS),
        }
    }
}

fn normalize(word: &str) -> String {
    word.to_lowercase().replace('\u{2019}', "'")
}

fn is_number(s: &str) -> bool {
    let s = s.trim_start_matches(['$', '£', '€']);
    let mut seen_digit = false;
    let mut prev_sep = true;
    for c in s.chars() {
        if c.is_ascii_digit() {
            seen_digit = true;
            prev_sep = false;
        } else if matches!(c, '.' | ',') && !prev_sep {
            prev_sep = true;
        } else {
            return false;
        }
    }
    seen_digit && !prev_sep
}

/// `5'8`, `5'11`, `6'`.
fn is_feet_inches(s: &str) -> bool {
    let s = s.replace('\u{2019}', "'");
    match s.split_once('\'') {
        Some((feet, inches)) => {
            !feet.is_empty()
                && feet.len() <= 1
                && feet.chars().all(|c| c.is_ascii_digit())
                && inches.len() <= 2
                && inches.chars().all(|c| c.is_ascii_digit())
        }
        None => false,
    }
}

/// `11yo`, `3yr`, `6mo`, `thirteen-year-old`.
fn is_age_descriptor(lower: &str) -> bool {
    if lower.contains("year-old") || lower.contains("yr-old") || lower.contains("month-old") {
        return true;
    }
    let digits = lower.chars().take_while(|c| c.is_ascii_digit()).count();
    digits > 0 && matches!(&lower[digits..], "yo" | "y/o" | "yr" | "yrs" | "mo" | "mos")
}

fn is_capitalized(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

impl RuleExtractor {
    fn is_measure_start(&self, tok: &WordToken) -> bool {
        is_number(&tok.text) || is_feet_inches(&tok.text) || self.sizes.contains(tok.text.as_str())
    }

    fn is_pronoun_form(&self, lower: &str) -> Option<String> {
        if self.pronouns.contains(lower) {
            return Some(lower.to_string());
        }
        // I'm, she's, they're
        if let Some((base, _)) = lower.split_once('\'') {
            if self.pronouns.contains(base) {
                return Some(base.to_string());
            }
        }
        None
    }

    fn name_cue(&self, tok: &WordToken) -> bool {
        !tok.sentence_initial && is_capitalized(&tok.text) && self.is_pronoun_form(&normalize(&tok.text)).is_none()
    }

    pub fn extract_entities(&self, text: &str) -> Vec<EntitySpan> {
        let toks = word_tokens(text);
        let chars: Vec<char> = text.chars().collect();
        let span = |first: usize, last: usize, label: &str| {
            let (start, end) = (toks[first].char_start, toks[last].char_end);
            EntitySpan {
                text: chars[start..end].iter().collect(),
                label: label.to_string(),
                start,
                end,
            }
        };
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let tok = &toks[i];
            if self.is_measure_start(tok) {
                let mut last = i;
                // 9 to 9.5, 160 lbs, 5 ft 8
                while !toks[last].trailing_punct && last + 1 < toks.len() {
                    let next = &toks[last + 1];
                    let lower = normalize(&next.text);
                    if self.units.contains(lower.as_str()) && !is_number(&toks[last].text.replace(['$'], "x")) {
                        break;
                    }
                    if self.units.contains(lower.as_str())
                        || (is_number(&next.text) && self.units.contains(normalize(&toks[last].text).as_str()))
                    {
                        last += 1;
                    } else if matches!(lower.as_str(), "to" | "-" | "x")
                        && !next.trailing_punct
                        && last + 2 < toks.len()
                        && is_number(&toks[last + 2].text)
                    {
                        last += 2;
                    } else {
                        break;
                    }
                }
                out.push(span(i, last, "MEASURE"));
                i = last + 1;
            } else if self.name_cue(tok) {
                let mut last = i;
                while !toks[last].trailing_punct && last + 1 < toks.len() {
                    let next = &toks[last + 1];
                    if self.name_cue(next) && !self.is_measure_start(next) {
                        last += 1;
                    } else if NAME_CONNECTORS.contains(&next.text.as_str())
                        && !next.trailing_punct
                        && last + 2 < toks.len()
                        && self.name_cue(&toks[last + 2])
                    {
                        last += 2;
                    } else {
                        break;
                    }
                }
                let label = if i == last && self.months.contains(normalize(&tok.text).as_str()) {
                    "DATE"
                } else {
                    "NAME"
                };
                out.push(span(i, last, label));
                i = last + 1;
            } else {
                i += 1;
            }
        }
        out
    }

    pub fn extract_nominals(&self, text: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for tok in word_tokens(text) {
            let lower = normalize(&tok.text);
            let key = if let Some(p) = self.is_pronoun_form(&lower) {
                Some(p)
            } else if self.kinship.contains(lower.as_str())
                || is_age_descriptor(&lower)
                || (!tok.sentence_initial && is_capitalized(&tok.text))
            {
                Some(lower)
            } else {
                None
            };
            if let Some(key) = key {
                if seen.insert(key.clone()) {
                    out.push(key);
                }
            }
        }
        out
    }
}

impl MentionExtractor for RuleExtractor {
    fn name(&self) -> &str {
        "rules"
    }

    fn extract_batch(&self, texts: &[&str]) -> Result<Vec<Mentions>> {
        Ok(texts
            .iter()
            .map(|t| Mentions {
                entities: self.extract_entities(t),
                nominals: self.extract_nominals(t),
            })
            .collect())
    }
}

/// Keeps a non-overlapping subset of spans, longest first, then leftmost.
pub fn resolve_overlaps(mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    spans.sort_by(|a, b| (b.end - b.start).cmp(&(a.end - a.start)).then(a.start.cmp(&b.start)));
    let mut kept: Vec<EntitySpan> = Vec::new();
    for s in spans {
        if s.end <= s.start {
            continue;
        }
        if kept.iter().all(|k| s.end <= k.start || s.start >= k.end) {
            kept.push(s);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionSpans {
    pub entities: Vec<EntitySpan>,
    pub nominals: Vec<String>,
    pub token_count: usize,
    /// `None` when the review has no tokens.
    pub entity_density: Option<f64>,
    pub nominal_density: Option<f64>,
}

impl MentionSpans {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn nominal_count(&self) -> usize {
        self.nominals.len()
    }
}

fn to_spans(text: &str, raw: Mentions) -> Result<MentionSpans> {
    let token_count = word_tokens(text).len();
    let entities = resolve_overlaps(raw.entities);
    let mut seen = HashSet::new();
    let nominals: Vec<String> = raw
        .nominals
        .into_iter()
        .map(|n| normalize(&n))
        .filter(|n| seen.insert(n.clone()))
        .collect();
    if entities.len() > token_count || nominals.len() > token_count {
        return Err(Error::Backend(format!(
            "extractor returned {} entities / {} nominals for a {token_count}-token text",
            entities.len(),
            nominals.len()
        )));
    }
    let density = |c: usize| (token_count > 0).then(|| c as f64 / token_count as f64);
    Ok(MentionSpans {
        entity_density: density(entities.len()),
        nominal_density: density(nominals.len()),
        entities,
        nominals,
        token_count,
    })
}

pub fn mention_spans(texts: &[&str], extractor: &dyn MentionExtractor) -> Result<Vec<MentionSpans>> {
    let raw = extractor.extract_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::Backend(format!(
            "extractor returned {} results for {} texts",
            raw.len(),
            texts.len()
        )));
    }
    texts.iter().zip(raw).map(|(t, m)| to_spans(t, m)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentPrivacyStats {
    pub mean_entity_count: f64,
    pub max_entity_count: f64,
    pub mean_entity_density: f64,
    pub max_entity_density: f64,
    pub mean_nominal_count: f64,
    pub max_nominal_count: f64,
    pub mean_nominal_density: f64,
    pub max_nominal_density: f64,
    pub reviews_included: usize,
    /// Reviews with no tokens.
    pub reviews_excluded: usize,
    pub backend: String,
}

pub fn stats_from_spans(spans: &[MentionSpans], backend: &str) -> Result<ContentPrivacyStats> {
    let included: Vec<&MentionSpans> = spans.iter().filter(|s| s.token_count > 0).collect();
    if included.is_empty() {
        return Err(Error::undefined("privacy", "no review has any tokens"));
    }
    let n = included.len() as f64;
    let mean = |f: &dyn Fn(&MentionSpans) -> f64| included.iter().map(|s| f(s)).sum::<f64>() / n;
    let max = |f: &dyn Fn(&MentionSpans) -> f64| included.iter().map(|s| f(s)).fold(0.0, f64::max);
    let e = |s: &MentionSpans| s.entity_count() as f64;
    let rho = |s: &MentionSpans| s.entity_density.unwrap_or(0.0);
    let nc = |s: &MentionSpans| s.nominal_count() as f64;
    let delta = |s: &MentionSpans| s.nominal_density.unwrap_or(0.0);
    Ok(ContentPrivacyStats {
        mean_entity_count: mean(&e),
        max_entity_count: max(&e),
        mean_entity_density: mean(&rho),
        max_entity_density: max(&rho),
        mean_nominal_count: mean(&nc),
        max_nominal_count: max(&nc),
        mean_nominal_density: mean(&delta),
        max_nominal_density: max(&delta),
        reviews_included: included.len(),
        reviews_excluded: spans.len() - included.len(),
        backend: backend.to_string(),
    })
}

pub fn content_privacy_stats(corpus: &Corpus, extractor: &dyn MentionExtractor) -> Result<ContentPrivacyStats> {
    let texts: Vec<&str> = corpus.texts().collect();
    let spans = mention_spans(&texts, extractor)?;
    stats_from_spans(&spans, extractor.name())
}

/// One JSON line per review: its position, user, spans and densities.
pub fn write_spans_jsonl(corpus: &Corpus, extractor: &dyn MentionExtractor, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        index: usize,
        user_id: &'a str,
        #[serde(flatten)]
        spans: &'a MentionSpans,
    }
    let texts: Vec<&str> = corpus.texts().collect();
    let spans = mention_spans(&texts, extractor)?;
    let mut out = Vec::new();
    for (index, (review, spans)) in corpus.reviews.iter().zip(&spans).enumerate() {
        let line = Line {
            index,
            user_id: &review.user_id,
            spans,
        };
        serde_json::to_writer(&mut out, &line).expect("spans serialize");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::Review;
    use approx::assert_abs_diff_eq;

    const SIZES_ROW: &str = "Bought this in XL for my 11yo who is 5'8 and 110.";
    const KIN_ROW: &str = "My granddaughter loves these!";

    fn single(text: &str) -> MentionSpans {
        mention_spans(&[text], &RuleExtractor::default()).unwrap().remove(0)
    }

    #[test]
    fn sizes_row_densities() {
        let s = single(SIZES_ROW);
        let texts: Vec<_> = s.entities.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, vec!["XL", "5'8", "110"]);
        assert_eq!(s.nominals, vec!["this", "xl", "my", "11yo", "who"]);
        assert_eq!(s.token_count, 12);
        assert_abs_diff_eq!(s.entity_density.unwrap(), 0.25);
        assert_abs_diff_eq!(s.nominal_density.unwrap(), 5.0 / 12.0);
    }

    #[test]
    fn kinship_row_densities() {
        let s = single(KIN_ROW);
        assert!(s.entities.is_empty());
        assert_eq!(s.nominals, vec!["my", "granddaughter", "these"]);
        assert_eq!(s.entity_density, Some(0.0));
        assert_eq!(s.nominal_density, Some(0.75));
    }

    #[test]
    fn plain_text_has_nothing() {
        let s = single("great product");
        assert!(s.entities.is_empty());
        let s = single("ok");
        assert!(s.nominals.is_empty());
        assert_eq!(s.nominal_density, Some(0.0));
    }

    #[test]
    fn multiword_entities() {
        let r = RuleExtractor::default();
        let ents = r.extract_entities(
            "I graduated from the University of Hawaii with a degree. I take a 9 to 9.5 shoe and weigh 160 lbs",
        );
        let texts: Vec<_> = ents.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, vec!["University of Hawaii", "9 to 9.5", "160 lbs"]);
        assert_eq!(ents[1].label, "MEASURE");
    }

    #[test]
    fn sentence_initial_capitals_are_ignored() {
        let r = RuleExtractor::default();
        assert!(r.extract_entities("Cheaply made").is_empty());
        assert!(r.extract_entities("Great. Would buy again").is_empty());
        assert!(r.extract_entities("I think I'm happy").is_empty());
        let ents = r.extract_entities("Bought it in December for Sam");
        assert_eq!(ents[0].label, "DATE");
        assert_eq!(ents[1].text, "Sam");
    }

    #[test]
    fn contractions_count_as_their_pronoun() {
        let r = RuleExtractor::default();
        assert_eq!(r.extract_nominals("I'm sure I like it"), vec!["i", "it"]);
    }

    #[test]
    fn densities_stay_in_unit_interval() {
        let texts = [
            "XL XL XL",
            "Sam Jones and Amy Lee from Palo Alto",
            "5'8 110 120 9 to 10",
            "I me my mine we us",
            "",
        ];
        for s in mention_spans(&texts, &RuleExtractor::default()).unwrap() {
            for d in [s.entity_density, s.nominal_density].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&d));
            }
        }
    }

    #[test]
    fn overlaps_resolve_longest_first() {
        let span = |s, e| EntitySpan {
            text: String::new(),
            label: "X".into(),
            start: s,
            end: e,
        };
        let kept = resolve_overlaps(vec![span(0, 3), span(2, 10), span(10, 12), span(11, 12)]);
        let bounds: Vec<_> = kept.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(bounds, vec![(2, 10), (10, 12)]);
    }

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            "t",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Review::new(format!("u{i}"), 3, *t).unwrap())
                .collect(),
        )
    }

    #[test]
    fn stats_single_review() {
        let s = content_privacy_stats(&corpus(&[SIZES_ROW]), &RuleExtractor::default()).unwrap();
        assert_eq!(s.mean_entity_count, 3.0);
        assert_eq!(s.max_entity_count, 3.0);
        assert_abs_diff_eq!(s.mean_entity_density, 0.25);
        assert_abs_diff_eq!(s.max_entity_density, 0.25);
    }

    #[test]
    fn stats_two_reviews_and_exclusions() {
        let s = content_privacy_stats(&corpus(&[KIN_ROW, SIZES_ROW, "  "]), &RuleExtractor::default()).unwrap();
        assert_abs_diff_eq!(s.mean_entity_density, 0.125);
        assert_abs_diff_eq!(s.max_entity_density, 0.25);
        assert_eq!(s.reviews_excluded, 1);
        assert!(s.max_nominal_density >= s.mean_nominal_density);
    }

    #[test]
    fn stats_without_entities() {
        let s = content_privacy_stats(&corpus(&["great product", "soft fabric"]), &RuleExtractor::default()).unwrap();
        assert_eq!(s.mean_entity_count, 0.0);
        assert_eq!(s.max_entity_count, 0.0);
    }

    #[test]
    fn all_empty_is_undefined() {
        let err = content_privacy_stats(&corpus(&["", "..."]), &RuleExtractor::default()).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric { .. }));
    }

    #[test]
    fn stats_ignore_review_order() {
        let texts = [KIN_ROW, SIZES_ROW, "Sam loves it", "nothing here at all"];
        let mut rev = texts;
        rev.reverse();
        let a = content_privacy_stats(&corpus(&texts), &RuleExtractor::default()).unwrap();
        let b = content_privacy_stats(&corpus(&rev), &RuleExtractor::default()).unwrap();
        assert_abs_diff_eq!(a.mean_nominal_density, b.mean_nominal_density, epsilon = 1e-15);
        assert_eq!(a.max_entity_count, b.max_entity_count);
    }

    #[test]
    fn spans_jsonl_has_one_line_per_review() {
        let corpus = Corpus::new(
            "t",
            vec![
                Review::new("a", 5, SIZES_ROW).unwrap(),
                Review::new("b", 4, KIN_ROW).unwrap(),
            ],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spans.jsonl");
        write_spans_jsonl(&corpus, &RuleExtractor::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["user_id"], "b");
        assert_eq!(lines[1]["nominals"].as_array().unwrap().len(), 3);
        assert_eq!(lines[0]["token_count"], single(SIZES_ROW).token_count);
    }
}
