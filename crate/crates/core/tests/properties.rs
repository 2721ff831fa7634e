//! Property tests for cross-module invariants.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::BigRational;
use proptest::prelude::*;
use webcurate::dedup::{compute_signatures, dedup_corpus, estimate_jaccard, lsh_band_keys, DedupConfig};
use webcurate::eval::{macro_average, prf, ConfusionCounts, EvalReport, ReportSection, SectionMetrics, SectionOutcome};
use webcurate::heuristics::{apply_heuristics, duplicate_line_fraction, top_ngram_char_fraction, HeuristicRuleSet};
use webcurate::pipeline::{run_pipeline, PipelineConfig, StageFlags};
use webcurate::quality::{binarize, FeatureExtractor, Label, QualityModel, Scorer};
use webcurate::record::{read_all, write_records, Document};

fn doc_strategy() -> impl Strategy<Value = Document> {
    (
        "[a-z0-9]{1,12}",
        any::<String>(),
        "[a-z]{0,8}(\\.[a-z]{2,5})?",
        "(\\PC|[\\x00-\\x1f]|[\u{4e00}-\u{4e80}]|[\u{1F600}-\u{1F64F}]){0,80}",
        proptest::option::of(any::<i64>()),
        proptest::collection::btree_map("[a-z_]{1,6}", any::<String>(), 0..4),
    )
        .prop_map(|(id, source, domain, text, ts, meta)| {
            let mut d = Document::new(id, text).with_source(source).with_domain(domain);
            d.timestamp = ts;
            // Reserved field names cannot round-trip as meta keys.
            d.meta = meta
                .into_iter()
                .filter(|(k, _)| !["id", "source", "domain", "text", "timestamp", "meta"].contains(&k.as_str()))
                .collect();
            d
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn document_serialization_round_trips(docs in proptest::collection::vec(doc_strategy(), 0..12)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("docs.jsonl");
        write_records(&docs, &p).unwrap();
        let (back, errors) = read_all::<Document>(&p).unwrap();
        prop_assert!(errors.is_empty());
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn heuristic_metrics_match_oracles_on_long_inputs(text in "([ab知识\n ]|xy\n|知识\n){0,4000}") {
        let chars = text.chars().count();
        prop_assume!(chars <= 10_000);
        let lines: Vec<&str> = text.split('\n').map(str::trim).filter(|l| !l.is_empty()).collect();
        let total: usize = lines.iter().map(|l| l.chars().count()).sum();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for l in &lines {
            *counts.entry(l).or_default() += 1;
        }
        let dup: usize = lines.iter().filter(|l| counts[*l] > 1).map(|l| l.chars().count()).sum();
        let expected = if total == 0 { 0.0 } else { dup as f64 / total as f64 };
        prop_assert_eq!(duplicate_line_fraction(&text), expected);

        let cs: Vec<char> = text.chars().collect();
        for n in [2usize, 3] {
            let mut best = 0;
            if cs.len() >= n {
                let grams: BTreeSet<&[char]> = cs.windows(n).collect();
                for g in grams {
                    let (mut i, mut c) = (0, 0);
                    while i + n <= cs.len() {
                        if &cs[i..i + n] == g { c += 1; i += n; } else { i += 1; }
                    }
                    best = best.max(c);
                }
            }
            let expected = if cs.len() < n { 0.0 } else { (best * n) as f64 / cs.len() as f64 };
            prop_assert_eq!(top_ngram_char_fraction(&text, n), expected);
        }
    }

    #[test]
    fn heuristics_are_pure(text in "\\PC{0,300}") {
        let d = Document::new("x", text);
        let rules = HeuristicRuleSet::default();
        prop_assert_eq!(apply_heuristics(&d, &rules), apply_heuristics(&d, &rules));
    }

    #[test]
    fn raising_the_threshold_never_adds_positives(
        weights in proptest::collection::vec(-3.0f64..3.0, 64),
        bias in -1.0f64..6.0,
        texts in proptest::collection::vec("[a-f知识学]{1,40}", 1..30),
        mut thresholds in proptest::collection::vec(0.0f64..5.0, 2..6),
    ) {
        let fx = FeatureExtractor::HashedCharNgrams { ngram_sizes: vec![1, 2], dim: 64, seed: 3 };
        let mut model = QualityModel::constant(fx, bias);
        model.weights = weights;
        let scorer = Scorer::new(model).unwrap();
        let docs: Vec<Document> = texts.into_iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), t)).collect();
        let scores = scorer.score_batch(&docs).unwrap();
        thresholds.sort_by(f64::total_cmp);
        let positives: Vec<usize> = thresholds
            .iter()
            .map(|t| scores.iter().filter(|s| binarize(s.raw, *t) == Label::Positive).count())
            .collect();
        prop_assert!(positives.windows(2).all(|w| w[1] <= w[0]), "{positives:?}");
    }

    #[test]
    fn macro_f1_is_the_mean_of_class_f1s(tp in 0u64..200, fp in 0u64..200, tn in 0u64..200, fn_ in 0u64..200) {
        let c = ConfusionCounts { tp, fp, tn, fn_ };
        let m = prf(&c);
        let mac = macro_average(&m.positive, &m.negative);
        let two = BigRational::from_integer(2.into());
        prop_assert_eq!(mac.f1.exact, (m.positive.f1.exact + m.negative.f1.exact) / two);
    }

    #[test]
    fn report_round_trips(counts in proptest::collection::vec((0u64..100, 0u64..100, 0u64..100, 0u64..100), 1..4)) {
        let sections = counts
            .iter()
            .enumerate()
            .map(|(i, &(tp, fp, tn, fn_))| ReportSection {
                classifier: format!("model-{i}"),
                outcome: SectionOutcome::Ok(SectionMetrics::from_counts(ConfusionCounts { tp, fp, tn, fn_ })),
            })
            .chain([ReportSection { classifier: "broken".into(), outcome: SectionOutcome::Failed { error: "no score".into() } }])
            .collect();
        let report = EvalReport { test_set: "t".into(), test_size: 10, threshold: 3.0, sections };
        prop_assert_eq!(EvalReport::from_jsonl(&report.to_jsonl().unwrap()).unwrap(), report);
    }
}

/// Corpora made of a few base texts and light edits of them, so clusters
/// of several sizes appear.
fn corpus_strategy() -> impl Strategy<Value = Vec<Document>> {
    let bases = proptest::collection::vec("[甲乙丙丁戊己庚辛壬癸子丑寅卯]{30,60}", 1..5);
    (bases, proptest::collection::vec((0usize..5, 0usize..60, "[a-c]{0,3}", proptest::option::of(0i64..5)), 1..25))
        .prop_map(|(bases, edits)| {
            edits
                .into_iter()
                .enumerate()
                .map(|(i, (b, at, ins, ts))| {
                    let base: Vec<char> = bases[b % bases.len()].chars().collect();
                    let at = at.min(base.len());
                    let text: String = base[..at].iter().copied().chain(ins.chars()).chain(base[at..].iter().copied()).collect();
                    let mut d = Document::new(format!("id{i:02}"), text);
                    d.timestamp = ts;
                    d
                })
                .collect()
        })
}

fn partition(docs: Vec<Document>, cfg: &DedupConfig) -> (BTreeSet<BTreeSet<String>>, BTreeMap<String, String>) {
    let out = dedup_corpus(docs, cfg).unwrap();
    let clusters = out
        .clusters
        .clusters()
        .into_iter()
        .map(|c| c.into_iter().map(str::to_owned).collect())
        .collect();
    let ids: Vec<String> = out.kept.iter().map(|d| d.id.clone()).chain(out.removed.iter().map(|(d, _)| d.id.clone())).collect();
    let winners = ids
        .into_iter()
        .filter_map(|id| out.clusters.winner(&id).map(|w| (id.clone(), w.to_owned())))
        .collect();
    (clusters, winners)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clustering_ignores_input_order(docs in corpus_strategy(), seed: u64) {
        let cfg = DedupConfig::default();
        let mut shuffled = docs.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(partition(docs, &cfg), partition(shuffled, &cfg));
    }

    #[test]
    fn clusters_are_the_closure_of_verified_candidate_pairs(docs in corpus_strategy()) {
        let cfg = DedupConfig::default();
        let sigs = compute_signatures(&docs, &cfg, None);
        let keys: Vec<Vec<u64>> = sigs.iter().map(|s| lsh_band_keys(s.as_ref().unwrap(), &cfg)).collect();
        // Brute-force O(n^2) pass, then closure by repeated relabeling.
        let n = docs.len();
        let mut label: Vec<usize> = (0..n).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let candidate = keys[i].iter().zip(&keys[j]).any(|(a, b)| a == b);
                let (a, b) = (sigs[i].as_ref().unwrap(), sigs[j].as_ref().unwrap());
                if candidate && estimate_jaccard(a, b).unwrap() >= cfg.similarity_threshold {
                    edges.push((i, j));
                }
            }
        }
        let mut changed = true;
        while changed {
            changed = false;
            for &(i, j) in &edges {
                let m = label[i].min(label[j]);
                if label[i] != m || label[j] != m {
                    label[i] = m;
                    label[j] = m;
                    changed = true;
                }
            }
        }
        let out = dedup_corpus(docs.clone(), &cfg).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(
                    out.clusters.same_cluster(&docs[i].id, &docs[j].id),
                    label[i] == label[j],
                    "{} vs {}", docs[i].id, docs[j].id
                );
            }
        }
    }
}

fn stage_flags() -> impl Strategy<Value = StageFlags> {
    (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(safety, clean, heuristics, dedup)| StageFlags {
        safety,
        clean,
        heuristics,
        dedup,
        ..StageFlags::none()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stage_counts_chain_and_reconcile(docs in corpus_strategy(), flags in stage_flags(), blocked in proptest::collection::vec(any::<bool>(), 25)) {
        let dir = tempfile::tempdir().unwrap();
        let docs: Vec<Document> = docs
            .into_iter()
            .zip(blocked)
            .map(|(d, b)| if b { d.with_domain("bad.example") } else { d.with_domain("ok.example") })
            .collect();
        write_records(&docs, dir.path().join("in.jsonl")).unwrap();
        std::fs::write(dir.path().join("block.txt"), "bad.example\n").unwrap();
        let mut cfg = PipelineConfig { stages: flags, ..Default::default() };
        cfg.paths.inputs = vec![dir.path().join("in.jsonl").to_string_lossy().into_owned()];
        cfg.paths.output_dir = dir.path().join("out");
        cfg.paths.blocklist = Some(dir.path().join("block.txt"));
        let m = run_pipeline(&cfg).unwrap();
        prop_assert!(m.stats.reconciles());
        let stages = &m.stats.stages;
        prop_assert_eq!(stages[0].documents_in as usize, docs.len());
        for w in stages.windows(2) {
            prop_assert_eq!(w[1].documents_in, w[0].documents_out, "{} -> {}", w[0].stage, w[1].stage);
        }
        prop_assert_eq!(stages.last().unwrap().documents_out, m.kept);
        prop_assert_eq!(m.kept + m.rejected, docs.len() as u64);
    }
}
