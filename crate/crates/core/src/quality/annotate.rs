//! Driving an annotator endpoint over a document sample.
//!
//! Progress is journaled: every scored document is appended to the journal
//! and every failed one to the quarantine file, both keyed by `doc_id`. A
//! rerun skips ids present in either file, so an interrupted run resumes
//! where it stopped.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{AnnotationRecord, Document, JsonlReader};

use super::prompt::{build_annotation_request, parse_score, AnnotationPrompt, AnnotationRequest};

pub const ENV_URL: &str = "WEBCURATE_ANNOTATOR_URL";
pub const ENV_MODEL: &str = "WEBCURATE_ANNOTATOR_MODEL";
pub const ENV_TOKEN: &str = "WEBCURATE_ANNOTATOR_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnnotatorError {
    /// Worth retrying: connection failures, timeouts, 429, 5xx.
    Transient(String),
    /// Retrying will not help for this request.
    Permanent(String),
}

impl std::fmt::Display for AnnotatorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnnotatorError::Transient(m) => write!(f, "transient: {m}"),
            AnnotatorError::Permanent(m) => write!(f, "permanent: {m}"),
        }
    }
}

/// A chat-completion-style scoring endpoint.
pub trait Annotator: Sync {
    /// Recorded in every [`AnnotationRecord`] this annotator produces.
    fn id(&self) -> &str;
    fn complete(&self, request: &AnnotationRequest) -> std::result::Result<String, AnnotatorError>;
}

type Respond = dyn Fn(&AnnotationRequest, usize) -> std::result::Result<String, AnnotatorError> + Send + Sync;

/// In-process endpoint for tests and dry runs. The closure receives the
/// request and the 0-based global call number.
pub struct MockAnnotator {
    id: String,
    respond: Box<Respond>,
    calls: AtomicUsize,
}

impl MockAnnotator {
    pub fn new<F>(id: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&AnnotationRequest, usize) -> std::result::Result<String, AnnotatorError> + Send + Sync + 'static,
    {
        MockAnnotator {
            id: id.into(),
            respond: Box::new(respond),
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        let response = response.into();
        Self::new("mock", move |_, _| Ok(response.clone()))
    }

    /// Scores each excerpt with `teacher` and answers with a short verdict.
    pub fn teacher<F>(id: impl Into<String>, teacher: F) -> Self
    where
        F: Fn(&str) -> u8 + Send + Sync + 'static,
    {
        Self::new(id, move |req, _| {
            Ok(format!("Looks fine.\nEducational score: {}", teacher(&req.excerpt)))
        })
    }

    /// Number of requests received so far.
    pub fn requests(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Annotator for MockAnnotator {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &AnnotationRequest) -> std::result::Result<String, AnnotatorError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(request, n)
    }
}

/// OpenAI-compatible `POST {base}/chat/completions` client.
pub struct HttpAnnotator {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
}

impl HttpAnnotator {
    pub fn new(base_url: &str, model: impl Into<String>, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpAnnotator {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            token,
        }
    }

    /// Reads the base URL, model name and optional bearer token from the
    /// environment.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL).map_err(|_| Error::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| Error::Config(format!("{ENV_MODEL} is not set")))?;
        let token = std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty());
        Ok(Self::new(&url, model, token))
    }
}

impl Annotator for HttpAnnotator {
    fn id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &AnnotationRequest) -> std::result::Result<String, AnnotatorError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| AnnotatorError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(AnnotatorError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(AnnotatorError::Permanent(format!("HTTP {status}")));
        }
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| AnnotatorError::Permanent(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_owned)
            .ok_or_else(|| AnnotatorError::Permanent("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateConfig {
    pub concurrency: usize,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub initial_backoff: Duration,
    pub journal: Option<PathBuf>,
    pub quarantine: Option<PathBuf>,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            concurrency: 8,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            journal: None,
            quarantine: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub doc_id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Default)]
pub struct AnnotationOutcome {
    /// Scored documents in input order, including ones found in the journal.
    pub records: Vec<AnnotationRecord>,
    /// Failed documents in input order, including earlier quarantines.
    pub quarantined: Vec<QuarantineEntry>,
    /// Endpoint calls made by this run.
    pub requests: usize,
    /// Of those, how many were retries.
    pub retries: usize,
    /// Documents skipped because an earlier run already handled them.
    pub resumed: usize,
}

enum DocResult {
    Scored(AnnotationRecord),
    Quarantined(QuarantineEntry),
}

fn load_journal<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<Vec<T>> {
    let Some(path) = path.filter(|p| p.exists()) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut reader = JsonlReader::<T>::open(path)?;
    for item in &mut reader {
        match item {
            Ok(v) => out.push(v),
            // A torn final line from an interrupted write is skipped; the
            // document will simply be requested again.
            Err(Error::Record { line, message, .. }) => {
                log::warn!("{}:{line}: skipping journal line: {message}", path.display())
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn open_append(path: Option<&Path>) -> Result<Option<BufWriter<File>>> {
    path.map(|p| {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    })
    .transpose()
}

fn append_line<T: Serialize>(w: &mut Option<BufWriter<File>>, path: Option<&Path>, item: &T) -> Result<()> {
    if let (Some(w), Some(path)) = (w.as_mut(), path) {
        let line = serde_json::to_string(item)?;
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Annotates `docs`, retrying transient failures with exponential backoff.
///
/// Unparseable responses, empty documents and permanent request failures are
/// quarantined. A document that still fails transiently after
/// `max_attempts` makes the whole run fail; everything finished before that
/// is already in the journal.
pub fn annotate_corpus(
    docs: &[Document],
    annotator: &dyn Annotator,
    prompt: &AnnotationPrompt,
    cfg: &AnnotateConfig,
) -> Result<AnnotationOutcome> {
    prompt.validate()?;
    if cfg.max_attempts == 0 || cfg.concurrency == 0 {
        return Err(Error::Config("max_attempts and concurrency must be positive".into()));
    }
    let journal_path = cfg.journal.as_deref();
    let quarantine_path = cfg.quarantine.as_deref();

    let mut done: HashMap<String, DocResult> = HashMap::new();
    for r in load_journal::<AnnotationRecord>(journal_path)? {
        done.insert(r.doc_id.clone(), DocResult::Scored(r));
    }
    for q in load_journal::<QuarantineEntry>(quarantine_path)? {
        done.entry(q.doc_id.clone()).or_insert(DocResult::Quarantined(q));
    }

    let mut seen = HashSet::new();
    let pending: Vec<usize> = (0..docs.len())
        .filter(|&i| !done.contains_key(&docs[i].id) && seen.insert(docs[i].id.as_str()))
        .collect();
    let resumed = docs.iter().filter(|d| done.contains_key(&d.id)).count();

    let mut journal = open_append(journal_path)?;
    let mut quarantine = open_append(quarantine_path)?;

    let next = AtomicUsize::new(0);
    let requests = AtomicUsize::new(0);
    let retries = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<(String, DocResult)>>();

    let mut fatal = None;
    std::thread::scope(|scope| {
        for _ in 0..cfg.concurrency.min(pending.len()) {
            let tx = tx.clone();
            let (next, requests, retries, stop, pending) = (&next, &requests, &retries, &stop, &pending);
            scope.spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    let r = annotate_one(&docs[i], annotator, prompt, cfg, requests, retries);
                    if r.is_err() {
                        stop.store(true, Ordering::SeqCst);
                    }
                    if tx.send(r.map(|d| (docs[i].id.clone(), d))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        // Single writer: only this thread touches the journal files.
        for msg in rx {
            let written = msg.and_then(|(id, result)| {
                match &result {
                    DocResult::Scored(r) => append_line(&mut journal, journal_path, r)?,
                    DocResult::Quarantined(q) => append_line(&mut quarantine, quarantine_path, q)?,
                }
                done.insert(id, result);
                Ok(())
            });
            if let Err(e) = written {
                stop.store(true, Ordering::SeqCst);
                fatal.get_or_insert(e);
            }
        }
    });
    if let Some(e) = fatal {
        return Err(e);
    }

    let mut out = AnnotationOutcome {
        requests: requests.into_inner(),
        retries: retries.into_inner(),
        resumed,
        ..Default::default()
    };
    let mut emitted = HashSet::new();
    for d in docs {
        if !emitted.insert(d.id.as_str()) {
            continue;
        }
        match done.get(&d.id) {
            Some(DocResult::Scored(r)) => out.records.push(r.clone()),
            Some(DocResult::Quarantined(q)) => out.quarantined.push(q.clone()),
            None => unreachable!("every pending document is resolved or the run failed"),
        }
    }
    Ok(out)
}

fn annotate_one(
    doc: &Document,
    annotator: &dyn Annotator,
    prompt: &AnnotationPrompt,
    cfg: &AnnotateConfig,
    requests: &AtomicUsize,
    retries: &AtomicUsize,
) -> Result<DocResult> {
    let quarantine = |reason: &str, raw: Option<String>| {
        Ok(DocResult::Quarantined(QuarantineEntry {
            doc_id: doc.id.clone(),
            reason: reason.to_owned(),
            raw_response: raw,
        }))
    };
    let request = match build_annotation_request(doc, prompt) {
        Ok(r) => r,
        Err(e) => return quarantine(e.code(), None),
    };
    let mut last = String::new();
    for attempt in 1..=cfg.max_attempts {
        if attempt > 1 {
            retries.fetch_add(1, Ordering::SeqCst);
            let delay = cfg.initial_backoff * 2u32.pow(attempt - 2);
            log::warn!("retrying {} (attempt {attempt}) after {delay:?}: {last}", doc.id);
            std::thread::sleep(delay);
        }
        requests.fetch_add(1, Ordering::SeqCst);
        match annotator.complete(&request) {
            Ok(text) => {
                return match parse_score(&text) {
                    Ok(score) => Ok(DocResult::Scored(AnnotationRecord {
                        doc_id: doc.id.clone(),
                        score,
                        annotator: annotator.id().to_owned(),
                        raw_response: Some(text),
                    })),
                    Err(e) => quarantine(e.code(), Some(text)),
                };
            }
            Err(AnnotatorError::Permanent(m)) => return quarantine(&format!("request_failed: {m}"), None),
            Err(AnnotatorError::Transient(m)) => last = m,
        }
    }
    Err(Error::Annotator {
        attempts: cfg.max_attempts,
        message: format!("{}: {last}", doc.id),
    })
}
