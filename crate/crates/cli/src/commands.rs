use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use webcurate::dedup::{dedup_corpus, DedupConfig};
use webcurate::eval::{compare_classifiers, Classifier, PrecomputedScores};
use webcurate::pipeline::{load_scorer, run_pipeline, PipelineConfig, RunManifest, StageFlags};
use webcurate::quality::{
    agreement_rate, annotate_corpus, join_annotations, read_labeled, save_curves, split_train_test, train_regressor,
    write_labeled, AnnotateConfig, AnnotationPrompt, Annotator, FeatureExtractor, HttpAnnotator, LabeledDoc,
    MockAnnotator, Optimizer, TrainConfig, DEFAULT_TEST_FRACTION,
};
use webcurate::record::{read_all, write_jsonl, write_records, AnnotationRecord, Document, JsonlReader};

use crate::{default_beside, parse_positive, require_file, Global};

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input files or glob patterns (JSONL, optionally gzipped).
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<String>,
    /// Directory for kept.jsonl, ingest_errors.jsonl, stats and manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Input files or glob patterns.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<String>,
    /// Directory for kept.jsonl, rejects.jsonl, stats and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Pipeline config supplying heuristic and parser rules.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Domain blocklist; enables safety filtering.
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// Basic quality model; enables the basic quality stage.
    #[arg(long)]
    basic_model: Option<PathBuf>,
    /// Minimum basic quality score to pass.
    #[arg(long)]
    basic_threshold: Option<f64>,
    /// Sidecar embeddings for embedding-backed models.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Skip text cleaning.
    #[arg(long)]
    no_clean: bool,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// Input JSONL files, read in the order given.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Surviving documents, sorted by id.
    #[arg(long)]
    out: PathBuf,
    /// Removed documents with their verdicts.
    #[arg(long)]
    removed: Option<PathBuf>,
    /// Jaccard similarity at which two documents are duplicates.
    #[arg(long, default_value_t = 0.70)]
    threshold: f64,
    /// Signature length.
    #[arg(long, default_value_t = 128)]
    num_perm: usize,
    /// LSH bands; bands x rows must equal the signature length.
    #[arg(long, default_value_t = 16)]
    bands: usize,
    /// Rows per LSH band.
    #[arg(long, default_value_t = 8)]
    rows: usize,
    /// Shingle size in characters.
    #[arg(long, default_value_t = 5)]
    shingle: usize,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Documents to annotate.
    #[arg(long = "in")]
    input: PathBuf,
    /// Annotation journal; an existing journal is resumed.
    #[arg(long)]
    out: PathBuf,
    /// Failed documents; defaults to `<out>.quarantine.jsonl`.
    #[arg(long)]
    quarantine: Option<PathBuf>,
    /// Answer every request with this text instead of calling an endpoint.
    #[arg(long)]
    mock_response: Option<String>,
    /// Base URL of an OpenAI-compatible chat endpoint.
    #[arg(long, env = webcurate::quality::ENV_URL)]
    url: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, env = webcurate::quality::ENV_MODEL)]
    model: Option<String>,
    /// JSON file with `system`, `template` and `max_doc_chars`.
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    /// Attempts per document before it is quarantined.
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Documents to split.
    #[arg(long)]
    docs: PathBuf,
    /// Annotation records to join; without it `docs` must carry `meta.score`.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Training set output.
    #[arg(long)]
    train_out: PathBuf,
    /// Test set output.
    #[arg(long)]
    test_out: PathBuf,
    /// Fraction of documents held out for testing.
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// First annotation set.
    #[arg(long)]
    a: PathBuf,
    /// Second annotation set.
    #[arg(long)]
    b: PathBuf,
    /// Fail when exact agreement is below this rate.
    #[arg(long)]
    min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled training documents (`meta.score`).
    #[arg(long)]
    train: PathBuf,
    /// Labeled validation documents; picks the best learning rate.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Learning rates to try.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive, default_value = "1e-4,3e-4,1e-3")]
    lr_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, value_parser = ["sgd", "adam"], default_value = "sgd")]
    optimizer: String,
    /// Score at or above which a document counts as positive.
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Hashed feature dimension.
    #[arg(long, default_value_t = webcurate::quality::DEFAULT_HASH_DIM)]
    dim: usize,
    /// Character n-gram sizes to hash.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    ngrams: Vec<usize>,
    /// Use precomputed embeddings instead of hashed n-grams.
    #[arg(long, requires = "embedding_dim")]
    embeddings: Option<PathBuf>,
    /// Embedding width, required with --embeddings.
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Prefix for training curve files; defaults to the model path.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Documents to score.
    #[arg(long = "in")]
    input: PathBuf,
    /// Lines of `{"id", "score", "raw"}` in input order.
    #[arg(long)]
    out: PathBuf,
    /// Sidecar embeddings for embedding-backed models.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model files, or `.jsonl` files of precomputed `{"id", "score"}` lines.
    /// Each entry may be prefixed with `name=`.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    /// Labeled test set (documents with `meta.score`).
    #[arg(long)]
    test: PathBuf,
    /// Machine-readable report; defaults to `<test>.report.jsonl`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score at or above which a document counts as positive.
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Sidecar embeddings for embedding-backed models.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Pipeline config in TOML.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `paths.output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn apply_global(cfg: &mut PipelineConfig, g: &Global) {
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
}

fn report_manifest(m: &RunManifest, out_dir: &Path) {
    print!("{}", m.stats.render());
    println!(
        "kept {} rejected {} (outputs in {})",
        m.kept,
        m.rejected,
        out_dir.display()
    );
}

fn run_with(mut cfg: PipelineConfig, g: &Global) -> Result<()> {
    apply_global(&mut cfg, g);
    let m = run_pipeline(&cfg)?;
    report_manifest(&m, &cfg.paths.output_dir);
    Ok(())
}

pub fn ingest(a: IngestArgs, g: &Global) -> Result<()> {
    let mut cfg = PipelineConfig {
        stages: StageFlags::none(),
        ..Default::default()
    };
    cfg.paths.inputs = a.inputs;
    cfg.paths.output_dir = a.out_dir;
    run_with(cfg, g)
}

pub fn filter(a: FilterArgs, g: &Global) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.stages = StageFlags {
        safety: a.blocklist.is_some(),
        clean: !a.no_clean,
        heuristics: true,
        basic_quality: a.basic_model.is_some(),
        ..StageFlags::none()
    };
    cfg.paths.inputs = a.inputs;
    cfg.paths.output_dir = a.out_dir;
    cfg.paths.blocklist = a.blocklist;
    cfg.paths.basic_quality_model = a.basic_model;
    cfg.paths.embeddings = a.embeddings;
    if let Some(t) = a.basic_threshold {
        cfg.quality.basic_pass_threshold = t;
    }
    run_with(cfg, g)
}

fn read_documents(paths: &[PathBuf]) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for p in paths {
        let (mut d, errors) = read_all::<Document>(p)?;
        if let Some(e) = errors.into_iter().next() {
            return Err(e.into());
        }
        docs.append(&mut d);
    }
    Ok(docs)
}

pub fn dedup(a: DedupArgs, g: &Global) -> Result<()> {
    let mut cfg = DedupConfig {
        shingle_n: a.shingle,
        num_perm: a.num_perm,
        bands: a.bands,
        rows: a.rows,
        similarity_threshold: a.threshold,
        ..Default::default()
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let docs = read_documents(&a.inputs)?;
    let total = docs.len();
    let out = dedup_corpus(docs, &cfg)?;
    write_records(&out.kept, &a.out)?;
    if let Some(r) = &a.removed {
        let rows = out.removed.iter().map(|(doc, verdict)| webcurate::pipeline::Reject {
            doc: doc.clone(),
            verdict: verdict.clone(),
        });
        write_jsonl(rows, r)?;
    }
    println!(
        "{total} documents, {} clusters, kept {}, removed {}",
        out.clusters.num_clusters(),
        out.kept.len(),
        out.removed.len()
    );
    Ok(())
}

pub fn annotate(a: AnnotateArgs, _g: &Global) -> Result<()> {
    let docs = read_documents(std::slice::from_ref(&a.input))?;
    let prompt = match &a.prompt {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<AnnotationPrompt>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => AnnotationPrompt::default(),
    };
    let annotator: Box<dyn Annotator> = match (&a.mock_response, &a.url, &a.model) {
        (Some(r), _, _) => Box::new(MockAnnotator::constant(r.clone())),
        (None, Some(url), Some(model)) => Box::new(HttpAnnotator::new(
            url,
            model.clone(),
            std::env::var(webcurate::quality::ENV_TOKEN).ok(),
        )),
        _ => bail!("an endpoint needs --url and --model (or --mock-response for offline runs)"),
    };
    let cfg = AnnotateConfig {
        concurrency: a.concurrency,
        max_attempts: a.max_attempts,
        initial_backoff: Duration::from_millis(500),
        quarantine: Some(a.quarantine.unwrap_or_else(|| default_beside(&a.out, ".quarantine.jsonl"))),
        journal: Some(a.out),
    };
    let outcome = annotate_corpus(&docs, annotator.as_ref(), &prompt, &cfg)?;
    println!(
        "annotated {} (resumed {}), quarantined {}, requests {} (retries {})",
        outcome.records.len(),
        outcome.resumed,
        outcome.quarantined.len(),
        outcome.requests,
        outcome.retries
    );
    Ok(())
}

fn read_annotations(p: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for r in JsonlReader::<AnnotationRecord>::open(p)? {
        out.push(r?);
    }
    Ok(out)
}

pub fn split(a: SplitArgs, g: &Global) -> Result<()> {
    let labeled: Vec<LabeledDoc> = match &a.annotations {
        Some(ann) => join_annotations(&read_documents(std::slice::from_ref(&a.docs))?, &read_annotations(ann)?)?,
        None => read_labeled(&a.docs)?,
    };
    let (train, test) = split_train_test(&labeled, a.test_fraction, g.seed.unwrap_or(0))?;
    write_labeled(&train, &a.train_out)?;
    write_labeled(&test, &a.test_out)?;
    println!("train {} test {}", train.len(), test.len());
    Ok(())
}

pub fn agreement(a: AgreementArgs) -> Result<()> {
    let g = agreement_rate(&read_annotations(&a.a)?, &read_annotations(&a.b)?)?;
    println!(
        "compared {} exact {:.4} within_one {:.4}",
        g.compared, g.exact, g.within_one
    );
    if let Some(min) = a.min {
        if g.exact < min {
            bail!("exact agreement {:.4} is below the required {min}", g.exact);
        }
    }
    Ok(())
}

pub fn train(a: TrainArgs, g: &Global) -> Result<()> {
    require_file(&a.train)?;
    let seed = g.seed.unwrap_or(0);
    let fx = match (a.embeddings, a.embedding_dim) {
        (Some(path), Some(dim)) => FeatureExtractor::PrecomputedEmbeddings { path, dim },
        _ => FeatureExtractor::HashedCharNgrams {
            ngram_sizes: a.ngrams,
            dim: a.dim,
            seed,
        },
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr_grid: a.lr_grid,
        batch_size: a.batch_size,
        seed,
        optimizer: if a.optimizer == "adam" { Optimizer::Adam } else { Optimizer::Sgd },
        threshold: a.threshold,
        ..Default::default()
    };
    let train = read_labeled(&a.train)?;
    let val = match &a.val {
        Some(v) => read_labeled(v)?,
        None => Vec::new(),
    };
    let out = train_regressor(&train, &val, &fx, &cfg)?;
    out.model.save(&a.out)?;
    let curves = save_curves(&out.curves, a.curves.as_deref().unwrap_or(&a.out))?;
    let meta = &out.model.training_meta;
    println!(
        "model {} lr {:e} epoch {} val_macro_f1 {}",
        a.out.display(),
        meta.learning_rate,
        meta.best_epoch,
        meta.val_macro_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
    );
    for c in curves {
        println!("curve {}", c.display());
    }
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let scorer = load_scorer(&a.model, a.embeddings.as_deref(), None)?;
    let docs = read_documents(std::slice::from_ref(&a.input))?;
    let preds = scorer.score_batch(&docs)?;
    let rows = docs.iter().zip(&preds).map(|(d, p)| {
        serde_json::json!({ "id": d.id, "score": p.clamped, "raw": p.raw })
    });
    let n = write_jsonl(rows, &a.out)?;
    println!("scored {n} documents");
    Ok(())
}

fn named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => (name.to_owned(), PathBuf::from(path)),
        None => {
            let p = PathBuf::from(spec);
            let name = p.file_stem().map_or_else(|| spec.to_owned(), |s| s.to_string_lossy().into_owned());
            (name, p)
        }
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let test = read_labeled(&a.test)?;
    let mut owned: Vec<(String, Box<dyn Classifier>)> = Vec::new();
    for spec in &a.models {
        let (name, path) = named(spec);
        require_file(&path)?;
        let clf: Box<dyn Classifier> = if path.extension().is_some_and(|e| e == "jsonl") {
            Box::new(PrecomputedScores::load(&path, a.threshold)?)
        } else {
            Box::new(load_scorer(&path, a.embeddings.as_deref(), Some(a.threshold))?)
        };
        owned.push((name, clf));
    }
    let refs: Vec<(String, &dyn Classifier)> = owned.iter().map(|(n, c)| (n.clone(), c.as_ref())).collect();
    let test_name = a.test.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let report = compare_classifiers(&refs, &test, &test_name, a.threshold)?;
    print!("{}", report.render());
    let path = a.report.unwrap_or_else(|| default_beside(&a.test, ".report.jsonl"));
    report.save_jsonl(&path)?;
    log::info!("machine report written to {}", path.display());
    Ok(())
}

pub fn run(a: RunArgs, g: &Global) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    cfg.apply_env_overrides(|k| std::env::var(k).ok());
    if let Some(o) = a.output_dir {
        cfg.paths.output_dir = o;
    }
    run_with(cfg, g)
}
