//! Tokenization and stopword filtering.
//!
//! Text is split on Unicode whitespace and each piece loses its leading and
//! trailing punctuation. Interior punctuation stays, so `5'8`, `11yo` and
//! `large/extra-large` are single tokens. Pieces that are nothing but
//! punctuation are dropped.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Stopwords { words }
    }

    /// Case-insensitive membership.
    pub fn contains(&self, word: &str) -> bool {
        if word.chars().any(char::is_uppercase) {
            self.words.contains(&word.to_lowercase())
        } else {
            self.words.contains(word)
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn stopword_set(override_path: Option<&Path>) -> Result<Stopwords> {
    match override_path {
        Some(path) => Stopwords::from_file(path),
        None => Ok(Stopwords::default_english()),
    }
}

fn default_stopwords() -> &'static Stopwords {
    static SET: OnceLock<Stopwords> = OnceLock::new();
    SET.get_or_init(Stopwords::default_english)
}

/// A whitespace-delimited word with its surrounding punctuation removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordToken {
    pub text: String,
    /// Char offsets of `text` in the source string, end exclusive.
    pub char_start: usize,
    pub char_end: usize,
    /// First word of the text or of a sentence.
    pub sentence_initial: bool,
    /// Punctuation followed the word (`Hawaii,` or `these!`).
    pub trailing_punct: bool,
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

pub fn word_tokens(text: &str) -> Vec<WordToken> {
    let mut out = Vec::new();
    let mut at_sentence_start = true;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let piece_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let piece = &chars[piece_start..i];
        let lead = piece.iter().take_while(|c| !c.is_alphanumeric()).count();
        if lead == piece.len() {
            // Punctuation-only piece: not a token, but it may close a sentence.
            if piece.iter().any(|&c| is_sentence_end(c)) {
                at_sentence_start = true;
            }
            continue;
        }
        let trail = piece.iter().rev().take_while(|c| !c.is_alphanumeric()).count();
        let core = &piece[lead..piece.len() - trail];
        let trailing = &piece[piece.len() - trail..];
        out.push(WordToken {
            text: core.iter().collect(),
            char_start: piece_start + lead,
            char_end: i - trail,
            sentence_initial: at_sentence_start,
            trailing_punct: trail > 0,
        });
        at_sentence_start = trailing.iter().any(|&c| is_sentence_end(c));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedReview {
    pub tokens_cased: Vec<String>,
    /// Lowercased, stopwords removed.
    pub tokens_content: Vec<String>,
    /// Non-punctuation tokens, stopwords included. The density denominator.
    pub content_token_count: usize,
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    stopwords: Stopwords,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            stopwords: Stopwords::default_english(),
        }
    }
}

impl Preprocessor {
    pub fn new(stopwords: Stopwords) -> Self {
        Preprocessor { stopwords }
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn tokenize(&self, text: &str) -> TokenizedReview {
        tokenize_with(text, &self.stopwords)
    }
}

/// Tokenize with the bundled English stopword list.
pub fn tokenize(text: &str) -> TokenizedReview {
    tokenize_with(text, default_stopwords())
}

pub fn tokenize_with(text: &str, stopwords: &Stopwords) -> TokenizedReview {
    let tokens_cased: Vec<String> = word_tokens(text).into_iter().map(|t| t.text).collect();
    let tokens_content = tokens_cased
        .iter()
        .map(|t| t.to_lowercase())
        .filter(|t| !stopwords.contains(t))
        .collect();
    TokenizedReview {
        content_token_count: tokens_cased.len(),
        tokens_cased,
        tokens_content,
    }
}
