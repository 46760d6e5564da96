//! Completion backends: an HTTP endpoint and a seeded in-process mock.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Metric;
use crate::error::{Error, Result};
use crate::synth::{review_text, sample_length_bin, words_for_bin};

/// Environment variable naming the completion endpoint.
pub const COMPLETION_URL_ENV: &str = "COMPLETION_URL";

pub trait CompletionBackend {
    fn name(&self) -> &str;
    fn complete(&mut self, prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// POSTs `{"prompt": ...}` and expects `{"text": ...}` back.
pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            url: url.to_string(),
            agent,
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&mut self, prompt: &str) -> Result<String> {
        let body = serde_json::to_string(&CompletionRequest { prompt }).expect("request serializes");
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| Error::Backend(format!("completion request to {} failed: {e}", self.url)))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Backend(format!("completion response unreadable: {e}")))?;
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Backend(format!("completion response is not {{\"text\": ...}}: {e}")))?;
        Ok(parsed.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockBehavior {
    /// Varied reviews, mostly short, that follow the length guidelines once
    /// the prompt carries them.
    Obedient,
    /// The same review on every row.
    Constant(String),
    /// Returns these completions in turn, then repeats the last.
    Scripted(Vec<String>),
}

/// Deterministic stand-in for a language model.
pub struct MockBackend {
    behavior: MockBehavior,
    seed: u64,
    calls: u64,
}

impl MockBackend {
    pub fn new(behavior: MockBehavior, seed: u64) -> Self {
        MockBackend {
            behavior,
            seed,
            calls: 0,
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

/// The batch size asked for: the number after "Generate ".
fn requested_count(prompt: &str) -> usize {
    prompt
        .split("Generate ")
        .skip(1)
        .find_map(|rest| {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            digits.parse().ok()
        })
        .unwrap_or(20)
}

/// Largest-remainder split of `n` items over the four length bins.
fn exact_bin_counts(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = raw.iter().map(|r| r.floor() as usize).collect::<Vec<_>>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    [counts[0], counts[1], counts[2], counts[3]]
}

const LENGTH_TARGETS: [f64; 4] = [0.25, 0.40, 0.25, 0.10];

fn csv_batch(rows: &[(u8, String, String)]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["rating", "review", "user-id"])
        .expect("in-memory write");
    for (rating, text, user) in rows {
        wtr.write_record([format!("{rating}.0").as_str(), text, user])
            .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

impl CompletionBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&mut self, prompt: &str) -> Result<String> {
        self.calls += 1;
        let n = requested_count(prompt);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.calls.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let out = match &self.behavior {
            MockBehavior::Obedient => {
                let bins: Vec<usize> = if prompt.contains(Metric::Length.section_title()) {
                    let counts = exact_bin_counts(n, &LENGTH_TARGETS);
                    (0..4).flat_map(|b| std::iter::repeat_n(b, counts[b])).collect()
                } else {
                    (0..n)
                        .map(|_| sample_length_bin(&mut rng, &[0.8, 0.2, 0.0, 0.0]))
                        .collect()
                };
                let rows: Vec<(u8, String, String)> = bins
                    .into_iter()
                    .enumerate()
                    .map(|(i, bin)| {
                        let rating = (i % 5) as u8 + 1;
                        let words = words_for_bin(&mut rng, bin);
                        let text = review_text(&mut rng, rating, words, false);
                        (rating, text, format!("M{}-{}", self.calls, rng.gen_range(0..1_000_000)))
                    })
                    .collect();
                csv_batch(&rows)
            }
            MockBehavior::Constant(text) => {
                let rows: Vec<(u8, String, String)> = (0..n)
                    .map(|i| ((i % 5) as u8 + 1, text.clone(), format!("C{i}")))
                    .collect();
                csv_batch(&rows)
            }
            MockBehavior::Scripted(outputs) => {
                let i = (self.calls as usize - 1).min(outputs.len().saturating_sub(1));
                outputs.get(i).cloned().unwrap_or_default()
            }
        };
        Ok(out)
    }
}
