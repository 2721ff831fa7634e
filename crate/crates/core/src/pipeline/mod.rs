//! End-to-end run: ingest, the enabled stages in fixed order, then emit.
//!
//! Per-document stages (safety, clean, heuristics, basic quality) run in
//! parallel; dedup is a barrier over everything that survived them; the
//! high-quality scorer runs last. Every output file is sorted by document
//! id, so the worker count changes wall-clock time only. The manifest is
//! written last; its presence marks a completed run.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clean::{clean_text, load_blocklist, safety_filter, Blocklist};
use crate::dedup::{dedup_corpus_cached, SignatureCache};
use crate::error::{Error, Result};
use crate::heuristics::{apply_heuristics, basic_quality_filter, BasicQualityModel};
use crate::quality::{binarize, Backbone, FeatureExtractor, Label, QualityModel, Scorer};
use crate::record::{atomic_write, write_jsonl, write_records, Document, FilterVerdict, JsonlReader, Stage};
use crate::stats::{CorpusStats, StageStats};

pub use config::*;

pub const KEPT_FILE: &str = "kept.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const FUNDAMENTAL_FILE: &str = "fundamental.jsonl";
pub const INGEST_ERRORS_FILE: &str = "ingest_errors.jsonl";
pub const STATS_FILE: &str = "stats.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A removed document and the verdict that removed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub doc: Document,
    pub verdict: FilterVerdict,
}

/// An input line that never became a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestError {
    pub file: PathBuf,
    pub line: usize,
    pub reason: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of the effective configuration, excluding the worker count.
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stats: CorpusStats,
    pub stage_seconds: BTreeMap<String, f64>,
    pub kept: u64,
    pub rejected: u64,
    pub fundamental: u64,
}

pub fn sha256_file(path: &Path) -> Result<FileDigest> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        h.update(&buf[..n]);
    }
    Ok(FileDigest {
        path: path.to_path_buf(),
        bytes,
        sha256: hex::encode(h.finalize()),
    })
}

/// Hash of the configuration fields that can influence results.
pub fn config_digest(cfg: &PipelineConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.workers = 0;
    c.dedup = cfg.effective_dedup();
    c.seed = None;
    let canonical = serde_json::to_vec(&c)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

struct Resources {
    blocklist: Option<Blocklist>,
    basic: Option<BasicQualityModel>,
    hq: Option<Scorer>,
    cache: Option<SignatureCache>,
}

/// Loads a model file into a scorer. `embeddings` is needed only for models
/// built on precomputed embeddings; `threshold` overrides the stored one.
pub fn load_scorer(model: &Path, embeddings: Option<&Path>, threshold: Option<f64>) -> Result<Scorer> {
    let mut m = QualityModel::load(model)?;
    if let Some(t) = threshold {
        m.threshold = t;
    }
    match (embeddings, &m.extractor) {
        (Some(e), FeatureExtractor::PrecomputedEmbeddings { dim, .. }) => {
            let b = Backbone::precomputed_from(e, *dim)?;
            Scorer::with_backbone(m, Arc::new(b))
        }
        _ => Scorer::new(m),
    }
}

fn load_resources(cfg: &PipelineConfig) -> Result<Resources> {
    let s = &cfg.stages;
    let p = &cfg.paths;
    let blocklist = if s.safety {
        let (bl, warnings) = load_blocklist(p.blocklist.as_ref().expect("validated"))?;
        for w in warnings {
            log::warn!("blocklist: {w}");
        }
        Some(bl)
    } else {
        None
    };
    let emb = p.embeddings.as_deref();
    let basic = if s.basic_quality {
        let scorer = load_scorer(p.basic_quality_model.as_ref().expect("validated"), emb, None)?;
        Some(BasicQualityModel::new(scorer, cfg.quality.basic_pass_threshold)?)
    } else {
        None
    };
    let hq = if s.hq_score {
        let path = p.hq_model.as_ref().expect("validated");
        Some(load_scorer(path, emb, cfg.quality.hq_threshold)?)
    } else {
        None
    };
    let dedup_cfg = cfg.effective_dedup();
    let cache = match (&p.signature_cache, s.dedup) {
        (Some(path), true) if path.exists() => match SignatureCache::load(path, &dedup_cfg) {
            Ok(c) => {
                log::info!("reusing {} cached signatures from {}", c.len(), path.display());
                Some(c)
            }
            Err(e) => {
                log::warn!("ignoring signature cache: {e}");
                Some(SignatureCache::new(&dedup_cfg))
            }
        },
        (Some(_), true) => Some(SignatureCache::new(&dedup_cfg)),
        _ => None,
    };
    Ok(Resources {
        blocklist,
        basic,
        hq,
        cache,
    })
}

/// Reads every input file. Malformed lines and repeated ids are reported,
/// not fatal; the first occurrence of an id wins.
fn ingest(files: &[PathBuf], stats: &mut StageStats) -> Result<(Vec<Document>, Vec<IngestError>)> {
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for file in files {
        let mut reader = JsonlReader::<Document>::open(file)?;
        let mut line_no = 0usize;
        for item in &mut reader {
            match item {
                Ok(doc) => {
                    line_no += 1;
                    stats.record_in(doc.text.len());
                    if seen.insert(doc.id.clone()) {
                        stats.record_out(doc.text.len());
                        docs.push(doc);
                    } else {
                        stats.record_removed("duplicate_id");
                        errors.push(IngestError {
                            file: file.clone(),
                            line: 0,
                            reason: "duplicate_id".into(),
                            message: format!("id {:?} seen earlier", doc.id),
                        });
                    }
                }
                Err(Error::Record { path, line, message }) => {
                    line_no += 1;
                    stats.record_in(0);
                    stats.record_removed("malformed_record");
                    errors.push(IngestError {
                        file: path,
                        line,
                        reason: "malformed_record".into(),
                        message,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        log::info!("ingested {} from {}", line_no, file.display());
    }
    Ok((docs, errors))
}

/// Stage indices for the per-document part of the pipeline.
const SAFETY: usize = 0;
const CLEAN: usize = 1;
const HEURISTICS: usize = 2;
const BASIC: usize = 3;

enum DocFate {
    Kept(Document),
    Removed(usize, Reject),
}

/// Where a document left the per-document stages, with its text size on
/// entry and at exit.
struct Traced {
    fate: DocFate,
    raw_bytes: usize,
}

fn per_document(doc: Document, cfg: &PipelineConfig, res: &Resources) -> Result<Traced> {
    let raw_bytes = doc.text.len();
    let fate = run_stages(doc, cfg, res)?;
    Ok(Traced { fate, raw_bytes })
}

fn run_stages(doc: Document, cfg: &PipelineConfig, res: &Resources) -> Result<DocFate> {
    let s = &cfg.stages;
    let mut doc = doc;
    let removed = |stage: usize, doc: Document, verdict: FilterVerdict| Ok(DocFate::Removed(stage, Reject { doc, verdict }));
    if let Some(bl) = &res.blocklist {
        let v = safety_filter(&doc, bl);
        if !v.pass {
            return removed(SAFETY, doc, v);
        }
    }
    if s.clean {
        doc.text = clean_text(&doc.text, cfg.parsers.for_source(&doc.source));
        if doc.text.is_empty() {
            return removed(CLEAN, doc, FilterVerdict::reject(Stage::Cleaning, "empty_after_clean"));
        }
    }
    if s.heuristics {
        let v = apply_heuristics(&doc, &cfg.heuristics);
        if !v.pass {
            return removed(HEURISTICS, doc, v);
        }
    }
    if let Some(m) = &res.basic {
        let v = basic_quality_filter(&doc, m)?;
        if !v.pass {
            return removed(BASIC, doc, v);
        }
    }
    Ok(DocFate::Kept(doc))
}

fn write_outputs<T: Serialize + Sync>(items: &[T], path: &Path) -> Result<()> {
    write_jsonl(items.iter(), path).map(|_| ())
}

/// Runs the configured pipeline and returns the manifest it wrote.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let files = cfg.input_files()?;
    let out = &cfg.paths.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() {
        std::fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let res = load_resources(cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, &files, res, &manifest_path))
}

fn run_inner(cfg: &PipelineConfig, files: &[PathBuf], mut res: Resources, manifest_path: &Path) -> Result<RunManifest> {
    let out = &cfg.paths.output_dir;
    let s = cfg.stages;
    let mut stats = CorpusStats::default();
    let mut seconds = BTreeMap::new();
    let mut rejects: Vec<Reject> = Vec::new();

    let t = Instant::now();
    let mut st = StageStats::new("ingest");
    let (docs, ingest_errors) = ingest(files, &mut st)?;
    stats.push(st);
    seconds.insert("ingest".to_string(), t.elapsed().as_secs_f64());

    // Per-document stages.
    let t = Instant::now();
    let traced: Vec<Traced> = docs
        .into_par_iter()
        .map(|d| per_document(d, cfg, &res))
        .collect::<Result<_>>()?;
    let names = ["safety", "clean", "heuristics", "basic_quality"];
    let enabled = [s.safety, s.clean, s.heuristics, s.basic_quality];
    let mut stage_stats: Vec<StageStats> = names.iter().map(|n| StageStats::new(*n)).collect();
    let mut survivors = Vec::new();
    for Traced { fate, raw_bytes } in traced {
        // A document enters each enabled stage up to the one that removed
        // it. Sizes before cleaning are the raw text, after it the cleaned.
        let (last, cur_bytes) = match &fate {
            DocFate::Kept(d) => (usize::MAX, d.text.len()),
            DocFate::Removed(i, r) => (*i, r.doc.text.len()),
        };
        for (i, st) in stage_stats.iter_mut().enumerate() {
            if !enabled[i] || i > last {
                continue;
            }
            st.record_in(if i <= CLEAN { raw_bytes } else { cur_bytes });
            match &fate {
                DocFate::Removed(j, r) if *j == i => st.record_removed(r.verdict.reason_code()),
                _ => st.record_out(if i < CLEAN { raw_bytes } else { cur_bytes }),
            }
        }
        match fate {
            DocFate::Kept(d) => survivors.push(d),
            DocFate::Removed(_, r) => rejects.push(r),
        }
    }
    let per_doc_secs = t.elapsed().as_secs_f64();
    for (i, st) in stage_stats.into_iter().enumerate() {
        if enabled[i] {
            seconds.insert(names[i].to_string(), per_doc_secs);
            stats.push(st);
        }
    }

    let mut current = survivors;
    if s.dedup {
        let t = Instant::now();
        let mut st = StageStats::new("dedup");
        for d in &current {
            st.record_in(d.text.len());
        }
        let dcfg = cfg.effective_dedup();
        let outcome = dedup_corpus_cached(current, &dcfg, res.cache.as_mut())?;
        for d in &outcome.kept {
            st.record_out(d.text.len());
        }
        for (doc, verdict) in outcome.removed {
            st.record_removed(verdict.reason_code());
            rejects.push(Reject { doc, verdict });
        }
        current = outcome.kept;
        if let (Some(cache), Some(path)) = (&res.cache, &cfg.paths.signature_cache) {
            cache.save(path)?;
        }
        stats.push(st);
        seconds.insert("dedup".to_string(), t.elapsed().as_secs_f64());
    }
    current.sort_by(|a, b| a.id.cmp(&b.id));
    let fundamental_path = out.join(FUNDAMENTAL_FILE);
    write_records(&current, &fundamental_path)?;
    let fundamental = current.len() as u64;

    if let Some(scorer) = &res.hq {
        let t = Instant::now();
        let preds = scorer.score_batch(&current)?;
        let mut st = StageStats::new("hq_score");
        for (d, p) in current.iter_mut().zip(&preds) {
            st.record_in(d.text.len());
            st.record_out(d.text.len());
            d.meta.insert("hq_score".into(), p.raw.to_string());
        }
        stats.push(st);
        seconds.insert("hq_score".to_string(), t.elapsed().as_secs_f64());

        if s.hq_threshold {
            let t = Instant::now();
            let mut st = StageStats::new("hq_threshold");
            let mut kept = Vec::with_capacity(current.len());
            for (d, p) in current.into_iter().zip(preds) {
                st.record_in(d.text.len());
                if binarize(p.raw, scorer.threshold()) == Label::Positive {
                    st.record_out(d.text.len());
                    kept.push(d);
                } else {
                    let verdict = FilterVerdict::scored(Stage::HqClassifier, false, "below_hq_threshold", p.raw);
                    st.record_removed(verdict.reason_code());
                    rejects.push(Reject { doc: d, verdict });
                }
            }
            current = kept;
            stats.push(st);
            seconds.insert("hq_threshold".to_string(), t.elapsed().as_secs_f64());
        }
    }

    // Emit.
    rejects.sort_by(|a, b| a.doc.id.cmp(&b.doc.id));
    let kept_path = out.join(KEPT_FILE);
    let rejects_path = out.join(REJECTS_FILE);
    let errors_path = out.join(INGEST_ERRORS_FILE);
    write_records(&current, &kept_path)?;
    write_outputs(&rejects, &rejects_path)?;
    write_outputs(&ingest_errors, &errors_path)?;
    debug_assert!(stats.reconciles(), "stage counters do not reconcile");
    let stats_path = out.join(STATS_FILE);
    let rendered = stats.render();
    atomic_write(&stats_path, |w| w.write_all(rendered.as_bytes()))?;

    let inputs = files.iter().map(|f| sha256_file(f)).collect::<Result<Vec<_>>>()?;
    let outputs = [&kept_path, &rejects_path, &fundamental_path, &errors_path, &stats_path]
        .into_iter()
        .map(|p| sha256_file(p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_digest(cfg)?,
        inputs,
        outputs,
        stats,
        stage_seconds: seconds,
        kept: current.len() as u64,
        rejected: rejects.len() as u64,
        fundamental,
    };
    let body = serde_json::to_vec_pretty(&manifest)?;
    atomic_write(manifest_path, |w| w.write_all(&body))?;
    Ok(manifest)
}
