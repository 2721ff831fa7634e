//! Annotation prompt rendering and verdict parsing.
//!
//! The rubric below describes a six-level (0-5) educational-value scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::Document;

pub const EXCERPT_SLOT: &str = "{excerpt}";
pub const RUBRIC_SLOT: &str = "{rubric}";
pub const TRUNCATION_MARKER: &str = "\n[... truncated]";
pub const DEFAULT_MAX_DOC_CHARS: usize = 3000;

/// Level descriptions for scores 0 through 5.
pub const EDUCATIONAL_RUBRIC: [&str; 6] = [
    "0: No educational value. Advertising, navigation, spam, boilerplate or unreadable text.",
    "1: Minimal value. Touches on a topic of some educational relevance but is dominated by \
     promotional or incoherent material.",
    "2: Some value. Addresses elements useful for learning but is superficial, disorganized or \
     mixes in unrelated content.",
    "3: Appropriate for education. Introduces concepts relevant to a school or general curriculum \
     in a coherent way, though it may be incomplete.",
    "4: Highly relevant. Clear, well-organized and focused material comparable to a textbook \
     section or tutorial, with little irrelevant content.",
    "5: Outstanding. Thorough, accurate and well-written instruction of the kind found in an \
     excellent textbook, suitable for direct use in teaching.",
];

const DEFAULT_SYSTEM: &str = "You are a careful annotator who rates web documents by their \
educational value. Answer in the language of your choice, then give the final verdict.";

const DEFAULT_TEMPLATE: &str = "Rate the following web page excerpt on a scale from 0 to 5 \
using this rubric:\n\n{rubric}\n\nExcerpt:\n<document>\n{excerpt}\n</document>\n\n\
Briefly justify your rating, then finish with a line of the form \"Educational score: <points>\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationPrompt {
    pub system: String,
    /// Must contain `{rubric}` and exactly one `{excerpt}`.
    pub template: String,
    pub max_doc_chars: usize,
}

impl Default for AnnotationPrompt {
    fn default() -> Self {
        AnnotationPrompt {
            system: DEFAULT_SYSTEM.to_owned(),
            template: DEFAULT_TEMPLATE.to_owned(),
            max_doc_chars: DEFAULT_MAX_DOC_CHARS,
        }
    }
}

impl AnnotationPrompt {
    pub fn validate(&self) -> Result<()> {
        let slots = self.template.matches(EXCERPT_SLOT).count();
        if slots != 1 {
            return Err(Error::Config(format!(
                "prompt template must contain exactly one {EXCERPT_SLOT} slot, found {slots}"
            )));
        }
        if !self.template.contains(RUBRIC_SLOT) {
            return Err(Error::Config(format!(
                "prompt template must contain a {RUBRIC_SLOT} slot"
            )));
        }
        if self.max_doc_chars == 0 {
            return Err(Error::Config("max_doc_chars must be positive".into()));
        }
        Ok(())
    }

    pub fn rubric() -> String {
        EDUCATIONAL_RUBRIC.join("\n")
    }
}

/// A rendered chat request: one system and one user message. The document
/// id and excerpt ride along for journaling and mock endpoints; only the two
/// messages are sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub doc_id: String,
    pub excerpt: String,
    pub system: String,
    pub user: String,
}

/// First `max` Unicode scalars of `text`, with the marker appended if cut.
pub fn excerpt(text: &str, max: usize) -> (String, bool) {
    match text.char_indices().nth(max) {
        None => (text.to_owned(), false),
        Some((cut, _)) => (format!("{}{TRUNCATION_MARKER}", &text[..cut]), true),
    }
}

pub fn build_annotation_request(doc: &Document, prompt: &AnnotationPrompt) -> Result<AnnotationRequest> {
    prompt.validate()?;
    if doc.text.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let (body, _) = excerpt(&doc.text, prompt.max_doc_chars);
    // Split around the slot first so `{rubric}`-like text inside the document
    // is never substituted.
    let (head, tail) = prompt.template.split_once(EXCERPT_SLOT).expect("validated");
    let rubric = AnnotationPrompt::rubric();
    let user = format!(
        "{}{}{}",
        head.replace(RUBRIC_SLOT, &rubric),
        body,
        tail.replace(RUBRIC_SLOT, &rubric)
    );
    Ok(AnnotationRequest {
        doc_id: doc.id.clone(),
        excerpt: body,
        system: prompt.system.clone(),
        user,
    })
}

/// The last standalone integer in 0..=5 in `response`.
///
/// Standalone means: not part of a longer number or decimal, not glued to a
/// letter, not negative, and not a scale bound (the `5` in "3/5", "3 out of
/// 5", "满分5", or either end of a range like "3-4"). Fullwidth digits count.
pub fn parse_score(response: &str) -> Result<u8> {
    let chars: Vec<char> = response.chars().map(fold_width).collect();
    let mut best = None;
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        if i - start != 1 {
            continue;
        }
        let d = chars[start] as u8 - b'0';
        if d <= 5 && standalone(&chars, start, i) {
            best = Some(d);
        }
    }
    best.ok_or(Error::UnparseableScore)
}

fn fold_width(c: char) -> char {
    match c {
        '０'..='９' => char::from_u32(c as u32 - '０' as u32 + '0' as u32).unwrap(),
        '／' => '/',
        '．' => '.',
        '－' => '-',
        '～' => '~',
        _ => c,
    }
}

fn standalone(c: &[char], start: usize, end: usize) -> bool {
    let before = start.checked_sub(1).map(|i| c[i]);
    let after = c.get(end).copied();
    if before.is_some_and(|b| b.is_alphanumeric() && !is_cjk(b)) {
        return false;
    }
    if after.is_some_and(|a| a.is_alphanumeric() && !is_cjk(a)) {
        return false;
    }
    // Decimals: "3.5", ".5". A trailing sentence period is fine.
    if before == Some('.') && start >= 2 && c[start - 2].is_ascii_digit() {
        return false;
    }
    if after == Some('.') && c.get(end + 1).is_some_and(|x| x.is_ascii_digit()) {
        return false;
    }
    // Negative numbers, and the high end of a tight range like "2-3".
    if before == Some('-') {
        return false;
    }
    let prev = prev_token(c, start);
    let next = next_token(c, end);
    // Denominators.
    if prev.as_deref() == Some("/")
        || prev.as_deref() == Some("out of")
        || prev.as_deref() == Some("满分")
    {
        return false;
    }
    // Numerators are fine; ranges are not.
    let range_sep = |t: &Option<String>| {
        matches!(t.as_deref(), Some("-" | "\u{2013}" | "\u{2014}" | "~" | "to" | "至" | "到"))
    };
    if range_sep(&next) && next_is_digit_after_sep(c, end) {
        return false;
    }
    if range_sep(&prev) && prev_is_digit_before_sep(c, start) {
        return false;
    }
    true
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0x20000..=0x2EBEF)
}

fn skip_spaces_back(c: &[char], mut i: usize) -> usize {
    while i > 0 && c[i - 1] == ' ' {
        i -= 1;
    }
    i
}

fn skip_spaces_fwd(c: &[char], mut i: usize) -> usize {
    while i < c.len() && c[i] == ' ' {
        i += 1;
    }
    i
}

/// The separator-ish token directly before `start`, ignoring spaces.
fn prev_token(c: &[char], start: usize) -> Option<String> {
    let j = skip_spaces_back(c, start);
    if j == 0 {
        return None;
    }
    let last = c[j - 1];
    if "/-\u{2013}\u{2014}~".contains(last) {
        return Some(last.to_string());
    }
    let s: String = c[..j].iter().collect();
    let lower = s.to_lowercase();
    for w in ["out of", "to"] {
        if lower.ends_with(w) {
            let k = lower.len() - w.len();
            let boundary = lower[..k].chars().next_back().is_none_or(|p| !p.is_alphanumeric());
            if boundary {
                return Some(w.to_owned());
            }
        }
    }
    for w in ["满分", "至", "到"] {
        if s.ends_with(w) {
            return Some(w.to_owned());
        }
    }
    None
}

fn next_token(c: &[char], end: usize) -> Option<String> {
    let j = skip_spaces_fwd(c, end);
    let first = *c.get(j)?;
    if "-\u{2013}\u{2014}~".contains(first) || first == '至' || first == '到' {
        return Some(first.to_string());
    }
    let rest: String = c[j..].iter().take(3).collect::<String>().to_lowercase();
    if rest.starts_with("to") && !rest.chars().nth(2).is_some_and(|x| x.is_alphanumeric()) {
        return Some("to".into());
    }
    None
}

fn next_is_digit_after_sep(c: &[char], end: usize) -> bool {
    let mut j = skip_spaces_fwd(c, end);
    if c.get(j).is_some_and(|x| x.eq_ignore_ascii_case(&'t')) {
        j += 2;
    } else {
        j += 1;
    }
    let j = skip_spaces_fwd(c, j);
    c.get(j).is_some_and(|x| x.is_ascii_digit())
}

fn prev_is_digit_before_sep(c: &[char], start: usize) -> bool {
    let mut j = skip_spaces_back(c, start);
    let sep_len = if j >= 2 && c[j - 2..j].iter().collect::<String>().eq_ignore_ascii_case("to") {
        2
    } else {
        1
    };
    j -= sep_len;
    let j = skip_spaces_back(c, j);
    j > 0 && c[j - 1].is_ascii_digit()
}
