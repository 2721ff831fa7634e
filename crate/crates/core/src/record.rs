//! Documents, stage verdicts and the line-delimited JSON record format.
//!
//! Every stage reads and writes the same record shape: one JSON object per
//! line with the fields `id`, `source`, `domain`, `text`, `timestamp` and
//! `meta`, always serialized in that order. Input fields outside this set are
//! folded into `meta` so nothing from an upstream dump is lost. Files whose
//! name ends in `.gz` are transparently (de)compressed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One web-sourced text record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    /// Registrable domain, lowercase, possibly empty.
    pub domain: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            source: String::new(),
            domain: String::new(),
            text: text.into(),
            timestamp: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Sets the domain. The value is lowercased; see [`validate_domain`].
    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = domain.into().to_lowercase();
        self
    }

    pub fn with_timestamp(mut self, ts: i64) -> Self {
        self.timestamp = Some(ts);
        self
    }

    /// Missing timestamps sort as 0.
    pub fn sort_timestamp(&self) -> i64 {
        self.timestamp.unwrap_or(0)
    }
}

/// Checks that a domain is a bare host name: no scheme, path, port or
/// userinfo, and no whitespace.
pub fn validate_domain(domain: &str) -> std::result::Result<(), String> {
    if let Some(c) = domain
        .chars()
        .find(|c| matches!(c, '/' | ':' | '@' | '?' | '#') || c.is_whitespace())
    {
        return Err(format!("domain {domain:?} contains {c:?}"));
    }
    Ok(())
}

fn value_to_meta(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

impl<'de> Deserialize<'de> for Document {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;

        let mut map = Map::deserialize(deserializer)?;
        let mut take_str = |key: &str, required: bool| -> std::result::Result<String, D::Error> {
            match map.remove(key) {
                Some(Value::String(s)) => Ok(s),
                Some(Value::Null) | None if !required => Ok(String::new()),
                Some(other) => Err(D::Error::custom(format!(
                    "field `{key}` must be a string, got {other}"
                ))),
                None => Err(D::Error::custom(format!("missing field `{key}`"))),
            }
        };

        let id = take_str("id", true)?;
        if id.is_empty() {
            return Err(D::Error::custom("field `id` is empty"));
        }
        let source = take_str("source", false)?;
        let domain = take_str("domain", false)?.to_lowercase();
        validate_domain(&domain).map_err(D::Error::custom)?;
        let text = take_str("text", true)?;

        let timestamp = match map.remove("timestamp") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => Some(n.as_i64().ok_or_else(|| {
                D::Error::custom(format!("timestamp {n} is not an integer"))
            })?),
            Some(other) => {
                return Err(D::Error::custom(format!(
                    "field `timestamp` must be an integer, got {other}"
                )))
            }
        };

        let mut meta = BTreeMap::new();
        match map.remove("meta") {
            None | Some(Value::Null) => {}
            Some(Value::Object(m)) => {
                for (k, v) in m {
                    meta.insert(k, value_to_meta(v));
                }
            }
            Some(other) => {
                return Err(D::Error::custom(format!(
                    "field `meta` must be an object, got {other}"
                )))
            }
        }
        for (k, v) in map {
            meta.entry(k).or_insert_with(|| value_to_meta(v));
        }

        Ok(Document {
            id,
            source,
            domain,
            text,
            timestamp,
            meta,
        })
    }
}

/// Pipeline stage that produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Safety,
    Cleaning,
    Heuristic,
    BasicQuality,
    Dedup,
    HqClassifier,
}

impl Stage {
    pub fn is_scoring(self) -> bool {
        matches!(self, Stage::BasicQuality | Stage::HqClassifier)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Safety => "safety",
            Stage::Cleaning => "cleaning",
            Stage::Heuristic => "heuristic",
            Stage::BasicQuality => "basic_quality",
            Stage::Dedup => "dedup",
            Stage::HqClassifier => "hq_classifier",
        };
        f.write_str(s)
    }
}

/// Outcome of one stage for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub stage: Stage,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl FilterVerdict {
    /// A passing verdict from a non-scoring stage.
    pub fn accept(stage: Stage) -> Self {
        debug_assert!(!stage.is_scoring());
        FilterVerdict {
            stage,
            pass: true,
            reason: String::new(),
            score: None,
        }
    }

    /// A rejection from a non-scoring stage.
    pub fn reject(stage: Stage, reason: impl Into<String>) -> Self {
        debug_assert!(!stage.is_scoring());
        let reason = reason.into();
        assert!(!reason.is_empty(), "rejections carry a reason");
        FilterVerdict {
            stage,
            pass: false,
            reason,
            score: None,
        }
    }

    /// Verdict of a scoring stage; `reason` is used only when `pass` is false.
    pub fn scored(stage: Stage, pass: bool, reason: &str, score: f64) -> Self {
        debug_assert!(stage.is_scoring());
        FilterVerdict {
            stage,
            pass,
            reason: if pass { String::new() } else { reason.to_owned() },
            score: Some(score),
        }
    }

    /// Reason with any `:<detail>` suffix removed, e.g. `dup_of:abc` -> `dup_of`.
    pub fn reason_code(&self) -> &str {
        self.reason.split(':').next().unwrap_or("")
    }
}

/// A document's 0-5 educational-value score from one annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotation")]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub score: u8,
    pub annotator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    doc_id: String,
    score: i64,
    annotator: String,
    #[serde(default)]
    raw_response: Option<String>,
}

impl TryFrom<RawAnnotation> for AnnotationRecord {
    type Error = String;

    fn try_from(raw: RawAnnotation) -> std::result::Result<Self, String> {
        if !(0..=5).contains(&raw.score) {
            return Err(format!("score {} outside [0,5]", raw.score));
        }
        Ok(AnnotationRecord {
            doc_id: raw.doc_id,
            score: raw.score as u8,
            annotator: raw.annotator,
            raw_response: raw.raw_response,
        })
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub(crate) fn open_reader(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(if is_gzip(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::with_capacity(1 << 16, file))
    })
}

/// Streaming reader over a line-delimited JSON file.
///
/// Malformed lines surface as [`Error::Record`] items carrying the line
/// number; iteration continues past them. An [`Error::Io`] item is fatal and
/// ends the stream. Blank lines are skipped.
pub struct JsonlReader<T> {
    path: PathBuf,
    inner: Box<dyn BufRead + Send>,
    line_no: usize,
    buf: Vec<u8>,
    malformed: usize,
    done: bool,
    _marker: PhantomData<fn() -> T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(JsonlReader {
            path: path.to_path_buf(),
            inner: open_reader(path)?,
            line_no: 0,
            buf: Vec::new(),
            malformed: 0,
            done: false,
            _marker: PhantomData,
        })
    }

    /// Number of malformed lines seen so far.
    pub fn malformed(&self) -> usize {
        self.malformed
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn record_error(&mut self, message: String) -> Error {
        self.malformed += 1;
        Error::Record {
            path: self.path.clone(),
            line: self.line_no,
            message,
        }
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done {
                return None;
            }
            self.buf.clear();
            match self.inner.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            }
            self.line_no += 1;
            let line = match std::str::from_utf8(&self.buf) {
                Ok(s) => s,
                Err(e) => return Some(Err(self.record_error(format!("invalid UTF-8: {e}")))),
            };
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            return Some(match serde_json::from_str(line) {
                Ok(v) => Ok(v),
                Err(e) => Err(self.record_error(e.to_string())),
            });
        }
    }
}

/// Opens a document file for streaming. Failing to open the file is fatal;
/// per-line problems are reported by the returned iterator.
pub fn read_records(path: impl AsRef<Path>) -> Result<JsonlReader<Document>> {
    JsonlReader::open(path)
}

/// Reads a whole file, returning the parsed items and the per-line errors.
pub fn read_all<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Vec<T>, Vec<Error>)> {
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for item in JsonlReader::<T>::open(path)? {
        match item {
            Ok(v) => items.push(v),
            Err(e @ Error::Record { .. }) => errors.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok((items, errors))
}

/// Writes items as line-delimited JSON, atomically.
///
/// Output goes to a temporary file next to `path` and is renamed into place
/// once complete, so a failed write never leaves a partial file behind.
pub fn write_jsonl<I>(items: I, path: impl AsRef<Path>) -> Result<usize>
where
    I: IntoIterator,
    I::Item: Serialize,
{
    let path = path.as_ref();
    atomic_write(path, |w| {
        let mut n = 0;
        for item in items {
            serde_json::to_writer(&mut *w, &item).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
            n += 1;
        }
        Ok(n)
    })
}

/// Writes documents one per line; returns the number written.
pub fn write_records<I>(docs: I, path: impl AsRef<Path>) -> Result<usize>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Document>,
{
    write_jsonl(docs.into_iter().map(DocRef), path)
}

struct DocRef<D>(D);

impl<D: std::borrow::Borrow<Document>> Serialize for DocRef<D> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.borrow().serialize(s)
    }
}

/// Runs `body` against a buffered writer for a temp file beside `path`, then
/// renames it into place. Gzip is applied when `path` ends in `.gz`.
pub(crate) fn atomic_write<T>(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> io::Result<T>,
) -> Result<T> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    let result = (|| {
        let file = tmp.as_file().try_clone()?;
        if is_gzip(path) {
            let mut w = GzEncoder::new(BufWriter::new(file), Compression::default());
            let out = body(&mut w)?;
            w.finish()?.flush()?;
            Ok(out)
        } else {
            let mut w = BufWriter::with_capacity(1 << 16, file);
            let out = body(&mut w)?;
            w.flush()?;
            Ok(out)
        }
    })();
    // Dropping `tmp` on the error path removes the partial file.
    let out = result.map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text)
            .with_source("news")
            .with_domain("example.com")
            .with_timestamp(7)
    }

    #[test]
    fn parses_direct_field_mapping() {
        let d: Document = serde_json::from_str(
            r#"{"id":"a1","source":"news","domain":"example.com","text":"你好"}"#,
        )
        .unwrap();
        assert_eq!(d.id, "a1");
        assert_eq!(d.text, "你好");
        assert_eq!(d.source, "news");
        assert_eq!(d.timestamp, None);
    }

    #[test]
    fn unknown_fields_go_to_meta() {
        let d: Document = serde_json::from_str(
            r#"{"id":"a","text":"x","url":"http://e.com/p","n":3,"meta":{"k":"v"}}"#,
        )
        .unwrap();
        assert_eq!(d.meta["url"], "http://e.com/p");
        assert_eq!(d.meta["n"], "3");
        assert_eq!(d.meta["k"], "v");
    }

    #[test]
    fn rejects_bad_domains_and_ids() {
        for line in [
            r#"{"id":"a","domain":"http://x.com","text":"t"}"#,
            r#"{"id":"a","domain":"x.com:80","text":"t"}"#,
            r#"{"id":"a","domain":"u@x.com","text":"t"}"#,
            r#"{"id":"","text":"t"}"#,
            r#"{"id":"a"}"#,
        ] {
            assert!(serde_json::from_str::<Document>(line).is_err(), "{line}");
        }
        let d: Document = serde_json::from_str(r#"{"id":"a","domain":"EX.com","text":"t"}"#).unwrap();
        assert_eq!(d.domain, "ex.com");
    }

    #[test]
    fn malformed_lines_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("in.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n\n{\"id\":\"b\",\"text\":\"y\"}\n",
        )
        .unwrap();
        let mut reader = read_records(&p).unwrap();
        let items: Vec<_> = reader.by_ref().collect();
        assert_eq!(items.len(), 3);
        assert!(matches!(&items[1], Err(Error::Record { line: 2, .. })));
        assert_eq!(items[2].as_ref().unwrap().id, "b");
        assert_eq!(reader.malformed(), 1);
    }

    #[test]
    fn invalid_utf8_is_a_line_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("in.jsonl");
        let mut bytes = b"{\"id\":\"a\",\"text\":\"".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe]);
        bytes.extend_from_slice(b"\"}\n{\"id\":\"b\",\"text\":\"ok\"}\n");
        std::fs::write(&p, bytes).unwrap();
        let (docs, errs) = read_all::<Document>(&p).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(errs.len(), 1);
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        let (docs, errs) = read_all::<Document>(&p).unwrap();
        assert!(docs.is_empty() && errs.is_empty());
    }

    #[test]
    fn missing_file_is_fatal() {
        assert!(matches!(
            read_records("/nonexistent/x.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        let docs = vec![doc("d1", "第一行\n第二行"), doc("d2", "tab\there \"q\"")];
        assert_eq!(write_records(&docs, &p).unwrap(), 2);
        let raw = std::fs::read_to_string(&p).unwrap();
        assert_eq!(raw.lines().count(), 2);
        assert!(raw.ends_with('\n'));
        assert!(raw.starts_with(r#"{"id":"d1","source":"news","domain":"example.com","text":"第一行\n第二行","timestamp":7,"meta":{}}"#));
        let (back, errs) = read_all::<Document>(&p).unwrap();
        assert!(errs.is_empty());
        assert_eq!(back, docs);
    }

    #[test]
    fn empty_write_gives_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        assert_eq!(write_records(Vec::<Document>::new(), &p).unwrap(), 0);
        assert_eq!(std::fs::read(&p).unwrap().len(), 0);
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl.gz");
        let docs = vec![doc("d1", "压缩")];
        write_records(&docs, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..2], &[0x1f, 0x8b]);
        let (back, _) = read_all::<Document>(&p).unwrap();
        assert_eq!(back, docs);
    }

    #[test]
    fn annotation_scores_are_range_checked() {
        assert!(serde_json::from_str::<AnnotationRecord>(
            r#"{"doc_id":"a","score":6,"annotator":"m"}"#
        )
        .is_err());
        let r: AnnotationRecord =
            serde_json::from_str(r#"{"doc_id":"a","score":5,"annotator":"m"}"#).unwrap();
        assert_eq!(r.score, 5);
    }

    #[test]
    fn verdict_reason_code_strips_detail() {
        let v = FilterVerdict::reject(Stage::Dedup, "dup_of:abc");
        assert_eq!(v.reason_code(), "dup_of");
        let s = FilterVerdict::scored(Stage::HqClassifier, true, "hq_threshold", 3.5);
        assert!(s.reason.is_empty());
        assert_eq!(s.score, Some(3.5));
    }
}
