//! Rule-based quality filters and the basic quality gate.
//!
//! Rules run in a fixed order and the first failing one names the verdict:
//! length, character-class fractions, mean line length, duplicate lines,
//! then top n-gram concentration.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory as Gc};

use crate::error::{Error, Result};
use crate::quality::Scorer;
use crate::record::{Document, FilterVerdict, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicRuleSet {
    pub min_chars: usize,
    pub max_chars: usize,
    pub max_duplicate_line_fraction: f64,
    /// `(n, max fraction)` pairs checked in list order.
    pub max_top_ngram_char_fraction: Vec<(usize, f64)>,
    pub max_symbol_fraction: f64,
    pub min_cjk_or_alnum_fraction: f64,
    pub mean_line_len_bounds: (f64, f64),
}

impl Default for HeuristicRuleSet {
    fn default() -> Self {
        HeuristicRuleSet {
            min_chars: 50,
            max_chars: 500_000,
            max_duplicate_line_fraction: 0.30,
            max_top_ngram_char_fraction: vec![(2, 0.20), (3, 0.18), (4, 0.16)],
            max_symbol_fraction: 0.30,
            min_cjk_or_alnum_fraction: 0.60,
            mean_line_len_bounds: (5.0, 5000.0),
        }
    }
}

impl HeuristicRuleSet {
    pub fn validate(&self) -> Result<()> {
        let fracs = [
            ("max_duplicate_line_fraction", self.max_duplicate_line_fraction),
            ("max_symbol_fraction", self.max_symbol_fraction),
            ("min_cjk_or_alnum_fraction", self.min_cjk_or_alnum_fraction),
        ];
        for (name, v) in fracs
            .into_iter()
            .chain(self.max_top_ngram_char_fraction.iter().map(|&(_, f)| ("max_top_ngram_char_fraction", f)))
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("heuristics.{name} = {v} outside [0, 1]")));
            }
        }
        if self.max_top_ngram_char_fraction.iter().any(|&(n, _)| n < 2) {
            return Err(Error::Config("heuristics: n-gram sizes must be >= 2".into()));
        }
        if self.min_chars > self.max_chars {
            return Err(Error::Config("heuristics.min_chars > max_chars".into()));
        }
        if self.mean_line_len_bounds.0 > self.mean_line_len_bounds.1 {
            return Err(Error::Config("heuristics.mean_line_len_bounds reversed".into()));
        }
        Ok(())
    }
}

/// Unicode punctuation (P*) or symbol (S*).
pub fn is_symbol(c: char) -> bool {
    use Gc::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

/// CJK unified ideograph (base block and extensions A-F), ASCII
/// alphanumeric, or fullwidth digit.
pub fn is_cjk_or_alnum(c: char) -> bool {
    c.is_ascii_alphanumeric()
        || matches!(c,
            '\u{4E00}'..='\u{9FFF}'
            | '\u{3400}'..='\u{4DBF}'
            | '\u{20000}'..='\u{2EBEF}'
            | '\u{FF10}'..='\u{FF19}')
}

/// Share of characters in lines whose trimmed content appears more than
/// once, over all characters in non-empty lines.
pub fn duplicate_line_fraction(text: &str) -> f64 {
    let lines: Vec<&str> = text.split('\n').map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut counts: HashMap<&str, usize> = HashMap::with_capacity(lines.len());
    for l in &lines {
        *counts.entry(l).or_default() += 1;
    }
    let (mut dup, mut total) = (0usize, 0usize);
    for l in &lines {
        let n = l.chars().count();
        total += n;
        if counts[l] > 1 {
            dup += n;
        }
    }
    if total == 0 {
        0.0
    } else {
        dup as f64 / total as f64
    }
}

/// Characters covered by the most frequent character n-gram, counting its
/// non-overlapping occurrences left to right, over all characters.
pub fn top_ngram_char_fraction(text: &str, n: usize) -> f64 {
    assert!(n >= 2, "n-gram size must be >= 2");
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let chars = bounds.len() - 1;
    if chars < n {
        return 0.0;
    }
    // gram -> (non-overlapping count, char index where the last counted match ends)
    let mut seen: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut best = 0;
    for i in 0..=chars - n {
        let gram = &text[bounds[i]..bounds[i + n]];
        let e = seen.entry(gram).or_insert((0, 0));
        if i >= e.1 {
            e.0 += 1;
            e.1 = i + n;
            best = best.max(e.0);
        }
    }
    (best * n) as f64 / chars as f64
}

fn char_class_fractions(text: &str) -> (f64, f64) {
    let (mut total, mut sym, mut good) = (0usize, 0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if is_symbol(c) {
            sym += 1;
        } else if is_cjk_or_alnum(c) {
            good += 1;
        }
    }
    if total == 0 {
        return (0.0, 0.0);
    }
    (sym as f64 / total as f64, good as f64 / total as f64)
}

fn mean_line_len(text: &str) -> f64 {
    let (mut lines, mut chars) = (0usize, 0usize);
    for l in text.split('\n').map(str::trim).filter(|l| !l.is_empty()) {
        lines += 1;
        chars += l.chars().count();
    }
    if lines == 0 {
        0.0
    } else {
        chars as f64 / lines as f64
    }
}

/// Evaluates every rule in order; the first failing rule names the verdict.
pub fn apply_heuristics(doc: &Document, rules: &HeuristicRuleSet) -> FilterVerdict {
    let reject = |reason: &str| FilterVerdict::reject(Stage::Heuristic, reason);
    let text = doc.text.as_str();

    let chars = text.chars().count();
    if chars < rules.min_chars {
        return reject("min_chars");
    }
    if chars > rules.max_chars {
        return reject("max_chars");
    }

    let (symbol, cjk_alnum) = char_class_fractions(text);
    if symbol > rules.max_symbol_fraction {
        return reject("max_symbol_fraction");
    }
    if cjk_alnum < rules.min_cjk_or_alnum_fraction {
        return reject("min_cjk_or_alnum_fraction");
    }

    let mll = mean_line_len(text);
    if mll < rules.mean_line_len_bounds.0 || mll > rules.mean_line_len_bounds.1 {
        return reject("mean_line_len");
    }

    if duplicate_line_fraction(text) > rules.max_duplicate_line_fraction {
        return reject("max_duplicate_line_fraction");
    }

    for &(n, max) in &rules.max_top_ngram_char_fraction {
        if top_ngram_char_fraction(text, n) > max {
            return reject(&format!("max_top_ngram_char_fraction:{n}"));
        }
    }
    FilterVerdict::accept(Stage::Heuristic)
}

/// Quality model trained to separate reference-style text from raw crawl
/// text, plus the score needed to pass.
#[derive(Debug, Clone)]
pub struct BasicQualityModel {
    pub scorer: Scorer,
    pub pass_threshold: f64,
}

impl BasicQualityModel {
    pub fn new(scorer: Scorer, pass_threshold: f64) -> Result<Self> {
        if !(0.0..=5.0).contains(&pass_threshold) {
            return Err(Error::Config(format!(
                "basic quality pass threshold {pass_threshold} outside the [0, 5] score range"
            )));
        }
        Ok(BasicQualityModel {
            scorer,
            pass_threshold,
        })
    }
}

/// Scores `doc` and passes it when the score reaches the threshold.
pub fn basic_quality_filter(doc: &Document, model: &BasicQualityModel) -> Result<FilterVerdict> {
    if doc.text.trim().is_empty() {
        return Ok(FilterVerdict::scored(Stage::BasicQuality, false, "empty_after_clean", 0.0));
    }
    let score = model.scorer.score(doc)?.raw;
    Ok(FilterVerdict::scored(
        Stage::BasicQuality,
        score >= model.pass_threshold,
        "basic_quality",
        score,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_dup_fraction(text: &str) -> f64 {
        let lines: Vec<String> = text
            .split('\n')
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let total: usize = lines.iter().map(|l| l.chars().count()).sum();
        if total == 0 {
            return 0.0;
        }
        let dup: usize = lines
            .iter()
            .filter(|l| lines.iter().filter(|m| m == l).count() > 1)
            .map(|l| l.chars().count())
            .sum();
        dup as f64 / total as f64
    }

    fn brute_top_ngram(text: &str, n: usize) -> f64 {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() < n {
            return 0.0;
        }
        let best = chars
            .windows(n)
            .map(|w| w.iter().collect::<String>())
            .map(|g| text.matches(g.as_str()).count())
            .max()
            .unwrap();
        (best * n) as f64 / chars.len() as f64
    }

    #[test]
    fn duplicate_line_examples() {
        assert_eq!(duplicate_line_fraction("a\nb\nc"), 0.0);
        assert_eq!(duplicate_line_fraction("ab\nab"), 1.0);
        assert_eq!(duplicate_line_fraction("ab\nab\ncdef"), 0.5);
        assert_eq!(duplicate_line_fraction(""), 0.0);
        assert_eq!(duplicate_line_fraction(" ab \nab\n\n"), 1.0);
    }

    #[test]
    fn top_ngram_examples() {
        assert_eq!(top_ngram_char_fraction("abababab", 2), 1.0);
        assert_eq!(top_ngram_char_fraction("abcdefgh", 2), 0.25);
        assert_eq!(top_ngram_char_fraction("a", 2), 0.0);
        assert_eq!(top_ngram_char_fraction("aaaa", 2), 1.0);
        assert_eq!(top_ngram_char_fraction("aaa", 2), 2.0 / 3.0);
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force(text in "[ab\n 你]{0,60}", n in 2usize..5) {
            prop_assert_eq!(duplicate_line_fraction(&text), brute_dup_fraction(&text));
            prop_assert_eq!(top_ngram_char_fraction(&text, n), brute_top_ngram(&text, n));
        }
    }

    #[test]
    fn char_classes() {
        assert!(is_symbol('，') && is_symbol('。') && is_symbol('$') && is_symbol('!'));
        assert!(!is_symbol('中') && !is_symbol('a'));
        assert!(is_cjk_or_alnum('中') && is_cjk_or_alnum('Z') && is_cjk_or_alnum('７'));
        assert!(!is_cjk_or_alnum('あ') && !is_cjk_or_alnum('é'));
    }

    const PROSE: &str = "春天来了，公园里的花都开了。孩子们在草地上奔跑，老人们坐在长椅上聊天。湖面上有几只小船慢慢划过，岸边的柳树随风摇摆。\n\
        远处的山峰被薄雾笼罩，显得格外宁静。阳光透过树叶洒在小路上，形成斑驳的光影。许多游客拿出相机记录下这美好的时刻，空气中弥漫着泥土和青草的清香。";

    #[test]
    fn heuristic_verdicts() {
        let rules = HeuristicRuleSet::default();
        let v = apply_heuristics(&Document::new("s", "短文本只有十个字啊啊"), &rules);
        assert_eq!(v.reason, "min_chars");

        let ok = apply_heuristics(&Document::new("p", PROSE), &rules);
        assert!(ok.pass, "{ok:?}");

        let line = "这是一个被重复了很多次的句子。";
        let repeated_lines = vec![line; 20].join("\n");
        let v = apply_heuristics(&Document::new("r", repeated_lines), &rules);
        assert_eq!(v.reason, "max_duplicate_line_fraction");

        let repeated_inline = line.repeat(20);
        let v = apply_heuristics(&Document::new("r", repeated_inline), &rules);
        assert!(v.reason.starts_with("max_top_ngram_char_fraction"), "{v:?}");

        let symbols = "!!!@@@###$$$%%%^^^&&&***".repeat(4) + "正常文字";
        let v = apply_heuristics(&Document::new("x", symbols), &rules);
        assert_eq!(v.reason, "max_symbol_fraction");

        let kana = "あいうえおかきくけこさしすせそたちつてとなにぬねの".repeat(3);
        let v = apply_heuristics(&Document::new("k", kana), &rules);
        assert_eq!(v.reason, "min_cjk_or_alnum_fraction");
    }

    #[test]
    fn first_failing_rule_wins() {
        // Too short and all symbols: length is checked first.
        let v = apply_heuristics(&Document::new("x", "!!!"), &HeuristicRuleSet::default());
        assert_eq!(v.reason, "min_chars");
        let one_char_lines = "中\n文\n字\n".repeat(30);
        let v = apply_heuristics(&Document::new("x", one_char_lines), &HeuristicRuleSet::default());
        assert_eq!(v.reason, "mean_line_len");
    }

    #[test]
    fn rule_validation() {
        assert!(HeuristicRuleSet::default().validate().is_ok());
        let bad = HeuristicRuleSet {
            max_symbol_fraction: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HeuristicRuleSet {
            min_chars: 10,
            max_chars: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
