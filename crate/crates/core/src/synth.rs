//! Seeded synthetic review corpora for fixtures, scale runs and the mock
//! completion backend.
//!
//! Ratings follow a skewed distribution typical of retail sites, text
//! polarity tracks the rating, and a small share of users write in an
//! idiosyncratic vocabulary so the outlier stage has something to find.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Corpus, Review};

const PRODUCTS: &[&str] = &[
    "shirt",
    "dress",
    "jacket",
    "shoes",
    "boots",
    "hat",
    "cap",
    "scarf",
    "jeans",
    "sweater",
    "backpack",
    "wallet",
    "belt",
    "socks",
    "leggings",
    "hoodie",
    "sandals",
    "gloves",
    "coat",
    "skirt",
    "blouse",
    "shorts",
    "pajamas",
    "swimsuit",
    "watch",
    "sunglasses",
    "bag",
    "vest",
];

const GOOD: &[&str] = &[
    "great",
    "love",
    "perfect",
    "comfortable",
    "soft",
    "beautiful",
    "nice",
    "excellent",
    "cute",
    "happy",
    "recommend",
    "sturdy",
    "flattering",
    "awesome",
    "pleased",
    "gorgeous",
    "cozy",
];

const BAD: &[&str] = &[
    "terrible",
    "cheap",
    "poor",
    "disappointed",
    "broke",
    "ripped",
    "awful",
    "uncomfortable",
    "returned",
    "flimsy",
    "itchy",
    "horrible",
    "waste",
    "worst",
    "faded",
    "scratchy",
    "useless",
];

const NEUTRAL: &[&str] = &[
    "fabric",
    "color",
    "fit",
    "size",
    "material",
    "quality",
    "stitching",
    "price",
    "delivery",
    "length",
    "waist",
    "sleeves",
    "zipper",
    "pockets",
    "shipping",
    "packaging",
    "seams",
    "style",
];

const FILLER: &[&str] = &[
    "really",
    "pretty",
    "very",
    "quite",
    "just",
    "also",
    "overall",
    "honestly",
    "definitely",
    "bit",
    "little",
    "much",
    "still",
    "after",
    "week",
    "wash",
    "wearing",
    "ordered",
    "arrived",
    "looks",
    "feels",
    "runs",
    "small",
    "large",
    "true",
    "expected",
    "picture",
    "online",
    "store",
];

const PEOPLE: &[&str] = &[
    "daughter",
    "son",
    "husband",
    "wife",
    "mom",
    "granddaughter",
    "sister",
    "friend",
];

/// Rare vocabulary used by a few idiosyncratic writers.
const ODD: &[&str] = &[
    "verily",
    "splendiferous",
    "quoth",
    "forsooth",
    "henceforth",
    "betwixt",
    "wherefore",
    "thither",
    "perchance",
    "anon",
    "erstwhile",
    "whilom",
    "eftsoons",
    "yonder",
    "prithee",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub reviews: usize,
    pub users: usize,
    pub seed: u64,
    /// Share of users writing with the rare vocabulary.
    pub odd_user_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            reviews: 1000,
            users: 400,
            seed: 7,
            odd_user_fraction: 0.01,
        }
    }
}

/// Word-count bins used by the length evaluator: 1-10, 11-40, 41-80, 81+.
pub const LENGTH_BIN_RANGES: [(usize, usize); 4] = [(3, 10), (11, 40), (41, 80), (81, 110)];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or("")
}

fn rating(rng: &mut ChaCha8Rng) -> u8 {
    const WEIGHTS: [u32; 5] = [8, 6, 10, 20, 56];
    let mut x = rng.gen_range(0..WEIGHTS.iter().sum::<u32>());
    for (i, w) in WEIGHTS.iter().enumerate() {
        if x < *w {
            return i as u8 + 1;
        }
        x -= w;
    }
    5
}

/// One review of exactly `target_words` (at least one) words whose tone
/// matches `rating`.
pub fn review_text(rng: &mut ChaCha8Rng, rating: u8, target_words: usize, odd: bool) -> String {
    let p_good = (rating as f64 - 1.0) / 4.0;
    let mut words: Vec<String> = Vec::with_capacity(target_words + 8);
    let mut sentence_start = true;
    while words.len() < target_words {
        let mut sentence: Vec<&str> = Vec::new();
        let len = rng.gen_range(3..=9).min(target_words - words.len()).max(1);
        let tone = if rng.gen_bool(p_good.clamp(0.05, 0.95)) {
            GOOD
        } else {
            BAD
        };
        for k in 0..len {
            let w = match (k, rng.gen_range(0..10)) {
                (0, _) if rng.gen_bool(0.3) => "the",
                (_, 0..=2) => pick(rng, tone),
                (_, 3..=4) => pick(rng, PRODUCTS),
                (_, 5..=6) => pick(rng, NEUTRAL),
                (_, 7) if rng.gen_bool(0.2) => pick(rng, PEOPLE),
                _ if odd => pick(rng, ODD),
                _ => pick(rng, FILLER),
            };
            sentence.push(w);
        }
        if rng.gen_bool(0.05) && words.len() + sentence.len() + 2 <= target_words {
            sentence.push(if rng.gen_bool(0.5) { "XL" } else { "size" });
            sentence.push(["8", "10", "12", "14"][rng.gen_range(0..4)]);
        }
        for (k, w) in sentence.iter().enumerate() {
            let mut s = w.to_string();
            if k == 0 && sentence_start {
                let mut cs = s.chars();
                if let Some(c) = cs.next() {
                    s = c.to_uppercase().chain(cs).collect();
                }
            }
            words.push(s);
            sentence_start = false;
        }
        if let Some(last) = words.last_mut() {
            last.push(if rng.gen_bool(0.15) { '!' } else { '.' });
        }
        sentence_start = true;
    }
    words.join(" ")
}

/// Length bin 0..4 for a target distribution of 25/40/25/10 percent.
pub fn sample_length_bin(rng: &mut ChaCha8Rng, fractions: &[f64; 4]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, f) in fractions.iter().enumerate() {
        acc += f;
        if x < acc {
            return i;
        }
    }
    3
}

pub fn words_for_bin(rng: &mut ChaCha8Rng, bin: usize) -> usize {
    let (lo, hi) = LENGTH_BIN_RANGES[bin.min(3)];
    rng.gen_range(lo..=hi)
}

pub fn synthetic_corpus(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let users = config.users.max(1);
    let odd_users = ((users as f64) * config.odd_user_fraction).round() as usize;
    let mut reviews = Vec::with_capacity(config.reviews);
    for i in 0..config.reviews {
        // Cover every rating in the first five reviews.
        let r = if i < 5 { i as u8 + 1 } else { rating(&mut rng) };
        let user = if i < users { i } else { rng.gen_range(0..users) };
        let bin = sample_length_bin(&mut rng, &[0.35, 0.45, 0.17, 0.03]);
        let n = words_for_bin(&mut rng, bin);
        let text = review_text(&mut rng, r, n, user < odd_users);
        reviews.push(Review {
            user_id: format!("U{user:06}"),
            rating: r,
            text,
        });
    }
    Corpus::new(format!("synthetic-{}", config.seed), reviews)
}
