//! Synthetic corpora with planted ground truth, shared by the integration
//! tests. Everything here is independent of the library's internals: the
//! generator decides each document's fate by construction and reports the
//! counts it expects.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webcurate::quality::{hashed_ngram_features, FeatureExtractor, QualityModel};
use webcurate::record::Document;

/// Writing styles with disjoint character pools, so a model can tell them
/// apart from unigram features alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Edu,
    Chat,
    Spam,
}

const POOL_SIZE: u32 = 96;

impl Style {
    pub const ALL: [Style; 3] = [Style::Edu, Style::Chat, Style::Spam];

    /// Consecutive runs of CJK unified ideographs, far apart.
    pub fn pool(self) -> Vec<char> {
        let start = match self {
            Style::Edu => 0x5B66,
            Style::Chat => 0x6C00,
            Style::Spam => 0x8D00,
        };
        (start..start + POOL_SIZE).map(|u| char::from_u32(u).unwrap()).collect()
    }
}

/// Sentences of 8-16 pool characters ending in "。", three per line.
pub fn body(rng: &mut ChaCha8Rng, style: Style, min_chars: usize) -> String {
    mixed_body(rng, if style == Style::Edu { 1.0 } else { 0.0 }, style, min_chars)
}

/// Like [`body`], but each character is drawn from the edu pool with
/// probability `p_edu` and from `other`'s pool otherwise.
pub fn mixed_body(rng: &mut ChaCha8Rng, p_edu: f64, other: Style, min_chars: usize) -> String {
    let (edu, alt) = (Style::Edu.pool(), other.pool());
    let mut out = String::new();
    let mut count = 0;
    let mut sentences = 0;
    while count < min_chars {
        if sentences > 0 {
            out.push(if sentences % 3 == 0 { '\n' } else { ' ' });
        }
        let len = rng.gen_range(8..=16);
        for _ in 0..len {
            let pool = if rng.gen::<f64>() < p_edu { &edu } else { &alt };
            out.push(*pool.choose(rng).unwrap());
        }
        out.push('。');
        count += len + 1;
        sentences += 1;
    }
    out
}

/// Character 5-shingles, computed directly.
pub fn shingles(text: &str) -> HashSet<Vec<char>> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 5 {
        return [chars].into_iter().filter(|c| !c.is_empty()).collect();
    }
    chars.windows(5).map(<[char]>::to_vec).collect()
}

pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let inter = a.iter().filter(|x| b.contains(*x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone)]
pub struct PlantSpec {
    pub total: usize,
    pub exact_dups: usize,
    pub near_dups: usize,
    pub blocked: usize,
    pub short: usize,
    /// Documents a basic quality model should reject.
    pub spam: usize,
    /// Documents that pass basic quality but fail the high-quality threshold.
    pub chat: usize,
    /// Minimum characters per regular document (about 1 KB of UTF-8).
    pub doc_chars: usize,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            total: 10_000,
            exact_dups: 500,
            near_dups: 50,
            blocked: 200,
            short: 300,
            spam: 1_000,
            chat: 1_000,
            doc_chars: 350,
            seed: 20241018,
        }
    }
}

/// Counts the generator predicts for a full pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub total: usize,
    pub blocked: usize,
    pub short: usize,
    pub spam: usize,
    pub duplicates: usize,
    pub chat: usize,
    /// Survivors of dedup (the fundamental corpus).
    pub fundamental: usize,
    pub kept: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct Planted {
    /// In a shuffled order.
    pub docs: Vec<Document>,
    pub blocklist: Vec<String>,
    /// `(copy, original)` ids with identical text.
    pub exact_pairs: Vec<(String, String)>,
    /// `(copy, original, exact 5-shingle Jaccard)`.
    pub near_pairs: Vec<(String, String, f64)>,
    pub expected: Expected,
}

const BLOCKED_DOMAINS: [&str; 4] = ["casino-deals.example", "spamfarm.example", "cheap-pills.example", "adult.example"];

/// Replaces pool characters one at a time until the shingle Jaccard to the
/// original drops below 0.97, never going under 0.9.
fn near_copy(rng: &mut ChaCha8Rng, text: &str) -> (String, f64) {
    let base = shingles(text);
    let mut chars: Vec<char> = text.chars().collect();
    let pool = Style::Edu.pool();
    loop {
        let i = rng.gen_range(0..chars.len());
        if !pool.contains(&chars[i]) {
            continue;
        }
        let mut next = chars.clone();
        next[i] = *pool.choose(rng).unwrap();
        let j = jaccard(&base, &shingles(&next.iter().collect::<String>()));
        if j < 0.9 {
            continue;
        }
        chars = next;
        if j < 0.97 {
            return (chars.into_iter().collect(), j);
        }
    }
}

/// Adds trailing blanks and CRLF endings that cleaning removes, so
/// the clean stage has work to do without changing any outcome.
fn decorate(rng: &mut ChaCha8Rng, text: &str) -> String {
    match rng.gen_range(0..3) {
        0 => text.replace('\n', "\r\n"),
        1 => text.replace('\n', "  \n"),
        _ => text.to_owned(),
    }
}

pub fn plant(spec: &PlantSpec) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unique = spec.total - spec.exact_dups - spec.near_dups;
    let regular = unique - spec.blocked - spec.short;
    let edu = regular - spec.spam - spec.chat;
    assert!(edu >= spec.exact_dups + spec.near_dups, "not enough originals to copy");

    let mut docs = Vec::with_capacity(spec.total);
    let mut originals: Vec<(String, String)> = Vec::new();
    let t0 = 1_700_000_000i64;
    let mut next_id = 0usize;
    let mut id = |prefix: &str| {
        next_id += 1;
        format!("{prefix}-{next_id:06}")
    };
    for k in 0..regular {
        let style = if k < edu {
            Style::Edu
        } else if k < edu + spec.spam {
            Style::Spam
        } else {
            Style::Chat
        };
        let text = body(&mut rng, style, spec.doc_chars);
        let doc_id = id("doc");
        // Originals stay undecorated so their copies are byte-identical.
        let raw = if style == Style::Edu && originals.len() < spec.exact_dups + spec.near_dups {
            originals.push((doc_id.clone(), text.clone()));
            text
        } else {
            decorate(&mut rng, &text)
        };
        docs.push(
            Document::new(doc_id, raw)
                .with_source(["news", "blog", "forum"][k % 3])
                .with_domain(format!("site{}.example.com", k % 97))
                .with_timestamp(t0 + k as i64),
        );
    }
    for k in 0..spec.blocked {
        let host = BLOCKED_DOMAINS[k % BLOCKED_DOMAINS.len()];
        let domain = if k % 2 == 0 { host.to_owned() } else { format!("www.{host}") };
        let text = body(&mut rng, Style::Edu, spec.doc_chars);
        docs.push(Document::new(id("blk"), text).with_source("blog").with_domain(domain));
    }
    for _ in 0..spec.short {
        let n = rng.gen_range(10..40);
        let text: String = body(&mut rng, Style::Edu, n).chars().take(n).collect();
        docs.push(Document::new(id("short"), text).with_source("news").with_domain("short.example.com"));
    }

    let mut exact_pairs = Vec::new();
    for (orig, text) in &originals[..spec.exact_dups] {
        let copy = id("copy");
        docs.push(
            Document::new(copy.clone(), text.clone())
                .with_source("forum")
                .with_domain("mirror.example.com")
                .with_timestamp(t0 + 10_000_000),
        );
        exact_pairs.push((copy, orig.clone()));
    }
    let mut near_pairs = Vec::new();
    for (orig, text) in &originals[spec.exact_dups..] {
        let (near, j) = near_copy(&mut rng, text);
        let copy = id("near");
        docs.push(
            Document::new(copy.clone(), near)
                .with_source("forum")
                .with_domain("mirror.example.com")
                .with_timestamp(t0 + 10_000_000),
        );
        near_pairs.push((copy, orig.clone(), j));
    }
    docs.shuffle(&mut rng);
    assert_eq!(docs.len(), spec.total);

    let duplicates = spec.exact_dups + spec.near_dups;
    let fundamental = edu + spec.chat;
    let expected = Expected {
        total: spec.total,
        blocked: spec.blocked,
        short: spec.short,
        spam: spec.spam,
        duplicates,
        chat: spec.chat,
        fundamental,
        kept: edu,
        rejected: spec.total - edu,
    };
    Planted {
        docs,
        blocklist: BLOCKED_DOMAINS.iter().map(|s| s.to_string()).collect(),
        exact_pairs,
        near_pairs,
        expected,
    }
}

/// A linear model over hashed n-grams that adds `alpha` per unit of
/// unigram mass from the `plus` pools and subtracts it for `minus` pools.
pub fn style_model(fx: &FeatureExtractor, plus: &[Style], minus: &[Style], bias: f64, alpha: f64) -> QualityModel {
    let FeatureExtractor::HashedCharNgrams { ngram_sizes, dim, seed } = fx else {
        panic!("style models need hashed features");
    };
    let mut model = QualityModel::constant(fx.clone(), bias);
    for (styles, sign) in [(plus, 1.0), (minus, -1.0)] {
        for s in styles {
            for c in s.pool() {
                let f = hashed_ngram_features(&c.to_string(), ngram_sizes, *dim, *seed);
                model.weights[f.indices[0] as usize] += sign * alpha;
            }
        }
    }
    model
}
