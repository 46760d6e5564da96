//! Evaluation-guided generation loop.
//!
//! Each cycle renders a prompt, asks a completion backend for a batch of
//! reviews, scores the batch on six checks and, for every failing check,
//! adds an instruction to that check's section of the next prompt. A
//! section holds at most three instructions; the oldest is dropped first.
//! Every parsed batch is kept, passing or not.

mod backend;
mod evaluate;
mod parse;
mod run;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backend::{CompletionBackend, HttpBackend, MockBackend, MockBehavior, COMPLETION_URL_ENV};
pub use evaluate::{
    evaluate_batch, length_bin, normalize_text, EvalSettings, LengthTargets, MetricVerdict, MetricVerdicts, Thresholds,
};
pub use parse::{parse_completion, ParsedBatch};
pub use run::{
    run_loop, AccumulatedDataset, CycleRecord, GeneratedReview, GenerationConfig, LoopOutcome, ThresholdMode,
};

/// Instructions kept per section.
pub const SECTION_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Lexical,
    Semantic,
    Sentiment,
    Outlier,
    Uniqueness,
    Length,
    /// Not an evaluator: fed by unparseable completions.
    Format,
}

impl Metric {
    /// The six evaluated dimensions, in rendering order.
    pub const EVALUATED: [Metric; 6] = [
        Metric::Lexical,
        Metric::Semantic,
        Metric::Sentiment,
        Metric::Outlier,
        Metric::Uniqueness,
        Metric::Length,
    ];
    pub const ALL: [Metric; 7] = [
        Metric::Lexical,
        Metric::Semantic,
        Metric::Sentiment,
        Metric::Outlier,
        Metric::Uniqueness,
        Metric::Length,
        Metric::Format,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Lexical => "lexical",
            Metric::Semantic => "semantic",
            Metric::Sentiment => "sentiment",
            Metric::Outlier => "outlier",
            Metric::Uniqueness => "uniqueness",
            Metric::Length => "length",
            Metric::Format => "format",
        }
    }

    pub fn section_title(self) -> &'static str {
        match self {
            Metric::Lexical => "LEXICAL DIVERSITY GUIDELINES",
            Metric::Semantic => "SEMANTIC DIVERSITY GUIDELINES",
            Metric::Sentiment => "SENTIMENT CONSISTENCY GUIDELINES",
            Metric::Outlier => "STYLE CONSISTENCY GUIDELINES",
            Metric::Uniqueness => "UNIQUENESS GUIDELINES",
            Metric::Length => "LENGTH DIVERSITY GUIDELINES",
            Metric::Format => "OUTPUT FORMAT GUIDELINES",
        }
    }
}

const LEVEL1: &str = include_str!("../../data/prompts/level1.txt");
const LEVEL2: &str = include_str!("../../data/prompts/level2.txt");

/// Bundled base template: 1 (generic products) or 2 (fashion, stricter).
pub fn base_template(level: u8) -> Result<&'static str> {
    match level {
        1 => Ok(LEVEL1),
        2 => Ok(LEVEL2),
        other => Err(Error::Config(format!("no bundled prompt level {other}; use 1 or 2"))),
    }
}

/// Per-metric instruction lists; each metric's cursor wraps around.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstructionPools {
    pub pools: BTreeMap<Metric, Vec<String>>,
}

fn pool_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

impl InstructionPools {
    pub fn bundled() -> Self {
        let raw: [(Metric, &str); 7] = [
            (Metric::Lexical, include_str!("../../data/pools/lexical.txt")),
            (Metric::Semantic, include_str!("../../data/pools/semantic.txt")),
            (Metric::Sentiment, include_str!("../../data/pools/sentiment.txt")),
            (Metric::Outlier, include_str!("../../data/pools/outlier.txt")),
            (Metric::Uniqueness, include_str!("../../data/pools/uniqueness.txt")),
            (Metric::Length, include_str!("../../data/pools/length.txt")),
            (Metric::Format, include_str!("../../data/pools/format.txt")),
        ];
        InstructionPools {
            pools: raw.into_iter().map(|(m, t)| (m, pool_lines(t))).collect(),
        }
    }

    /// Reads `<metric>.txt` for every metric present in `dir`; missing files
    /// fall back to the bundled pool.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut pools = Self::bundled();
        for m in Metric::ALL {
            let path = dir.join(format!("{}.txt", m.name()));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                pools.pools.insert(m, pool_lines(&text));
            }
        }
        Ok(pools)
    }

    pub fn with(mut self, metric: Metric, instructions: &[&str]) -> Self {
        self.pools
            .insert(metric, instructions.iter().map(|s| s.to_string()).collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub seq: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptState {
    pub base_prompt: String,
    pub num_reviews: usize,
    /// Example rows placed under the template's header line.
    pub examples: String,
    pub sections: BTreeMap<Metric, VecDeque<Instruction>>,
    pub cursors: BTreeMap<Metric, usize>,
    pub next_seq: u64,
    pub cycle: u32,
}

impl PromptState {
    pub fn new(base_prompt: impl Into<String>, num_reviews: usize) -> Self {
        PromptState {
            base_prompt: base_prompt.into(),
            num_reviews,
            examples: String::new(),
            sections: BTreeMap::new(),
            cursors: BTreeMap::new(),
            next_seq: 1,
            cycle: 0,
        }
    }

    pub fn with_examples(mut self, examples: impl Into<String>) -> Self {
        self.examples = examples.into();
        self
    }

    pub fn section(&self, metric: Metric) -> Vec<&str> {
        self.sections
            .get(&metric)
            .map(|s| s.iter().map(|i| i.text.as_str()).collect())
            .unwrap_or_default()
    }

    /// Draws the metric's next pooled instruction into its section.
    pub fn push_instruction(&mut self, metric: Metric, pools: &InstructionPools) -> Result<()> {
        let pool = pools
            .pools
            .get(&metric)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Config(format!("instruction pool for {} is empty", metric.name())))?;
        let cursor = self.cursors.entry(metric).or_insert(0);
        let text = pool[*cursor % pool.len()].clone();
        *cursor = (*cursor + 1) % pool.len();
        let section = self.sections.entry(metric).or_default();
        section.push_back(Instruction {
            seq: self.next_seq,
            text,
        });
        self.next_seq += 1;
        while section.len() > SECTION_CAP {
            section.pop_front();
        }
        Ok(())
    }
}

/// Base template with placeholders filled, then one titled section per
/// metric that has instructions.
pub fn render_prompt(state: &PromptState) -> String {
    let mut out = state
        .base_prompt
        .replace("{num_reviews}", &state.num_reviews.to_string())
        .replace("{examples}", state.examples.trim_end());
    for m in Metric::ALL {
        let Some(section) = state.sections.get(&m).filter(|s| !s.is_empty()) else {
            continue;
        };
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out.push('\n');
        out.push_str(m.section_title());
        out.push('\n');
        for i in section {
            out.push_str("- ");
            out.push_str(&i.text);
            out.push('\n');
        }
    }
    out
}

/// Adds one instruction per failed metric and advances the cycle counter.
pub fn update_prompt(state: &PromptState, verdicts: &MetricVerdicts, pools: &InstructionPools) -> Result<PromptState> {
    let mut next = state.clone();
    for v in verdicts.iter() {
        if !v.passed {
            next.push_instruction(v.metric, pools)?;
        }
    }
    next.cycle += 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn verdicts(failed: &[Metric]) -> MetricVerdicts {
        MetricVerdicts::from_fn(|m| MetricVerdict {
            metric: m,
            passed: !failed.contains(&m),
            score: None,
            threshold: 0.0,
        })
    }

    #[test]
    fn bundled_pools_are_large_enough() {
        let p = InstructionPools::bundled();
        for m in Metric::ALL {
            assert!(p.pools[&m].len() >= 4, "{m:?}");
        }
    }

    #[test]
    fn sliding_window_keeps_last_three() {
        let pools = InstructionPools::bundled().with(Metric::Lexical, &["A", "B", "C", "D"]);
        let mut s = PromptState::new("base", 10);
        for _ in 0..4 {
            s = update_prompt(&s, &verdicts(&[Metric::Lexical]), &pools).unwrap();
        }
        assert_eq!(s.section(Metric::Lexical), vec!["B", "C", "D"]);
        assert_eq!(s.cycle, 4);
        s = update_prompt(&s, &verdicts(&[Metric::Lexical]), &pools).unwrap();
        assert_eq!(s.section(Metric::Lexical), vec!["C", "D", "A"]);
    }

    #[test]
    fn passing_only_advances_cycle() {
        let s = PromptState::new("base {num_reviews}", 10);
        let next = update_prompt(&s, &verdicts(&[]), &InstructionPools::bundled()).unwrap();
        assert_eq!(next.cycle, 1);
        assert_eq!(PromptState { cycle: 0, ..next }, s);
    }

    #[test]
    fn first_failure_opens_section() {
        let s = PromptState::new("base", 10);
        let next = update_prompt(&s, &verdicts(&[Metric::Length]), &InstructionPools::bundled()).unwrap();
        assert_eq!(next.section(Metric::Length).len(), 1);
        assert!(next.section(Metric::Lexical).is_empty());
    }

    #[test]
    fn empty_pool_is_config_error() {
        let pools = InstructionPools::bundled().with(Metric::Outlier, &[]);
        let err = update_prompt(&PromptState::new("b", 1), &verdicts(&[Metric::Outlier]), &pools).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn render_without_sections_is_template() {
        let s = PromptState::new(base_template(1).unwrap(), 20).with_examples("5,Nice hat,U1");
        let text = render_prompt(&s);
        assert!(text.contains("Generate 20 new product reviews."));
        assert!(text.contains("rating,review,user-id\n5,Nice hat,U1\n"));
        assert!(!text.contains("GUIDELINES"));
        assert_eq!(render_prompt(&PromptState::new("Make {num_reviews}.", 3)), "Make 3.");
    }

    #[test]
    fn render_sections_in_fixed_order() {
        let pools = InstructionPools::bundled();
        let mut s = PromptState::new("Make {num_reviews}.", 3);
        s.push_instruction(Metric::Length, &pools).unwrap();
        s.push_instruction(Metric::Lexical, &pools).unwrap();
        let text = render_prompt(&s);
        let lex = text.find("LEXICAL DIVERSITY GUIDELINES").unwrap();
        let len = text.find("LENGTH DIVERSITY GUIDELINES").unwrap();
        assert!(lex < len);
        assert!(text.starts_with("Make 3.\n\nLEXICAL DIVERSITY GUIDELINES\n- "));
        assert_eq!(render_prompt(&s), text);
    }

    #[test]
    fn unknown_level_is_config_error() {
        assert!(base_template(2).unwrap().contains("{num_reviews}"));
        assert!(base_template(3).is_err());
    }

    fn arb_metric() -> impl Strategy<Value = Metric> {
        prop::sample::select(Metric::EVALUATED.to_vec())
    }

    proptest! {
        #[test]
        fn sections_never_exceed_cap(rounds in prop::collection::vec(prop::collection::vec(arb_metric(), 0..6), 0..30)) {
            let pools = InstructionPools::bundled();
            let mut s = PromptState::new("b", 5);
            let mut drawn: BTreeMap<Metric, Vec<String>> = BTreeMap::new();
            for failed in rounds {
                let before = s.clone();
                s = update_prompt(&s, &verdicts(&failed), &pools).unwrap();
                for m in Metric::EVALUATED {
                    if failed.contains(&m) {
                        let added = s.sections[&m].back().unwrap().text.clone();
                        drawn.entry(m).or_default().push(added);
                    } else {
                        prop_assert_eq!(s.sections.get(&m), before.sections.get(&m));
                    }
                }
                for (m, section) in &s.sections {
                    prop_assert!(section.len() <= SECTION_CAP);
                    let recent: Vec<&str> = drawn[m].iter().rev().take(SECTION_CAP).rev().map(String::as_str).collect();
                    prop_assert_eq!(s.section(*m), recent);
                    prop_assert!(section.iter().zip(section.iter().skip(1)).all(|(a, b)| a.seq < b.seq));
                }
            }
        }
    }
}
