//! Domain-level safety filtering and per-source text cleaning.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::record::{Document, FilterVerdict, Stage};

/// Set of blocked registrable domains.
#[derive(Debug, Clone, Default)]
pub struct Blocklist {
    entries: HashSet<String>,
    source_path: Option<PathBuf>,
}

impl Blocklist {
    /// Builds a blocklist from in-memory entries, normalizing each one.
    /// Invalid entries are returned as warnings and skipped.
    pub fn from_entries<I, S>(entries: I) -> (Self, Vec<String>)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut bl = Blocklist::default();
        let mut warnings = Vec::new();
        for (i, raw) in entries.into_iter().enumerate() {
            match normalize_entry(raw.as_ref()) {
                Ok(Some(e)) => {
                    bl.entries.insert(e);
                }
                Ok(None) => {}
                Err(msg) => warnings.push(format!("line {}: {msg}", i + 1)),
            }
        }
        (bl, warnings)
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.entries.contains(domain)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }

    /// True when `domain` is an entry or a subdomain of one.
    pub fn blocks(&self, domain: &str) -> bool {
        if domain.is_empty() || self.entries.is_empty() {
            return false;
        }
        let mut rest = domain;
        loop {
            if self.entries.contains(rest) {
                return true;
            }
            match rest.find('.') {
                Some(i) => rest = &rest[i + 1..],
                None => return false,
            }
        }
    }
}

fn normalize_entry(raw: &str) -> std::result::Result<Option<String>, String> {
    let line = raw.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let entry = line.to_lowercase();
    if entry.contains("://") {
        return Err(format!("{line:?} has a scheme"));
    }
    if let Some(c) = entry
        .chars()
        .find(|c| matches!(c, '/' | ':' | '@') || c.is_whitespace())
    {
        return Err(format!("{line:?} contains {c:?}"));
    }
    Ok(Some(entry.trim_matches('.').to_owned()).filter(|e| !e.is_empty()))
}

/// Loads a blocklist file: one domain per line, `#` starts a comment line.
/// Returns the list plus one warning per skipped entry.
pub fn load_blocklist(path: impl AsRef<Path>) -> Result<(Blocklist, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut bl, warnings) = Blocklist::from_entries(text.lines());
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    bl.source_path = Some(path.to_path_buf());
    Ok((bl, warnings))
}

/// Rejects documents whose domain is blocked, directly or as a subdomain.
pub fn safety_filter(doc: &Document, bl: &Blocklist) -> FilterVerdict {
    if bl.blocks(&doc.domain) {
        FilterVerdict::reject(Stage::Safety, "blocked_domain")
    } else {
        FilterVerdict::accept(Stage::Safety)
    }
}

/// A drop-if-matched line predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineFilter {
    /// Line contains the literal substring.
    Contains(String),
    /// Trimmed line starts with the literal prefix.
    Prefix(String),
}

impl LineFilter {
    pub fn matches(&self, trimmed_line: &str) -> bool {
        match self {
            LineFilter::Contains(s) => trimmed_line.contains(s.as_str()),
            LineFilter::Prefix(p) => trimmed_line.starts_with(p.as_str()),
        }
    }
}

/// Declarative extraction rule for one source collection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserRule {
    pub line_filters: Vec<LineFilter>,
    /// Non-blank lines shorter than this (in chars, after trimming) are dropped.
    pub min_line_chars: usize,
}

/// Rules keyed by source name, with a mandatory `default` fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, ParserRule>", into = "BTreeMap<String, ParserRule>")]
pub struct ParserRules {
    rules: BTreeMap<String, ParserRule>,
}

impl Default for ParserRules {
    fn default() -> Self {
        let mut rules = BTreeMap::new();
        rules.insert("default".to_owned(), ParserRule::default());
        ParserRules { rules }
    }
}

impl TryFrom<BTreeMap<String, ParserRule>> for ParserRules {
    type Error = String;

    fn try_from(mut rules: BTreeMap<String, ParserRule>) -> std::result::Result<Self, String> {
        rules.entry("default".to_owned()).or_default();
        Ok(ParserRules { rules })
    }
}

impl From<ParserRules> for BTreeMap<String, ParserRule> {
    fn from(r: ParserRules) -> Self {
        r.rules
    }
}

impl ParserRules {
    pub fn insert(&mut self, source: impl Into<String>, rule: ParserRule) {
        self.rules.insert(source.into(), rule);
    }

    /// The rule for `source`, or the default rule.
    pub fn for_source(&self, source: &str) -> &ParserRule {
        self.rules
            .get(source)
            .unwrap_or_else(|| &self.rules["default"])
    }
}

fn is_removed_control(c: char) -> bool {
    c != '\n' && c.is_control()
}

/// Normalizes and cleans raw extracted text.
///
/// Line endings become LF, control characters other than newline are removed,
/// the text is put in NFC, each line is trimmed, lines matched by the rule are
/// dropped, runs of more than two blank lines collapse to one, and leading or
/// trailing blank lines are removed. The function is idempotent.
pub fn clean_text(raw: &str, rule: &ParserRule) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let stripped: String = unified.chars().filter(|&c| !is_removed_control(c)).collect();
    let normalized: String = stripped.nfc().collect();

    let mut kept: Vec<&str> = Vec::new();
    for line in normalized.split('\n') {
        let t = line.trim();
        if t.is_empty() {
            kept.push("");
            continue;
        }
        if t.chars().count() < rule.min_line_chars
            || rule.line_filters.iter().any(|f| f.matches(t))
        {
            continue;
        }
        kept.push(t);
    }

    let start = kept.iter().position(|l| !l.is_empty());
    let Some(start) = start else {
        return String::new();
    };
    let end = kept.iter().rposition(|l| !l.is_empty()).unwrap() + 1;

    let mut out = String::with_capacity(normalized.len());
    let mut i = start;
    while i < end {
        if kept[i].is_empty() {
            let run_end = (i..end).find(|&j| !kept[j].is_empty()).unwrap_or(end);
            let run = run_end - i;
            let emit = if run > 2 { 1 } else { run };
            for _ in 0..emit {
                out.push('\n');
            }
            i = run_end;
        } else {
            if i > start {
                out.push('\n');
            }
            out.push_str(kept[i]);
            i += 1;
        }
    }
    out
}
