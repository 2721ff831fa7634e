//! Binary classification metrics and the multi-classifier comparison report.
//!
//! Metrics are computed as exact rationals and converted to `f64` once, so
//! results do not depend on summation order. A ratio with a zero denominator
//! is defined as 0 and flagged as degenerate.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{binarize, Label, LabeledDoc, Scorer};
use crate::record::{atomic_write, open_reader, Document};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Negative, Label::Positive) => self.fn_ += 1,
        }
    }
}

/// Counts over predictions and truth aligned position by position.
pub fn confusion(predictions: &[(String, Label)], truth: &[(String, Label)]) -> Result<ConfusionCounts> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions to evaluate".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((pid, p), (tid, t)) in predictions.iter().zip(truth) {
        if pid != tid {
            return Err(Error::InvalidInput(format!("misaligned ids {pid:?} and {tid:?}")));
        }
        c.add(*p, *t);
    }
    Ok(c)
}

/// One metric value, kept exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metric {
    pub exact: BigRational,
    /// Set when a 0/0 ratio was involved and the value defaulted to 0.
    pub degenerate: bool,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric {
                exact: BigRational::zero(),
                degenerate: true,
            }
        } else {
            Metric {
                exact: BigRational::new(BigInt::from(num), BigInt::from(den)),
                degenerate: false,
            }
        }
    }

    /// A metric known only as a value, e.g. a figure from a reference table. Exact for
    /// any finite `f64`.
    pub fn from_f64(v: f64) -> Self {
        Metric {
            exact: BigRational::from_float(v).expect("finite metric value"),
            degenerate: false,
        }
    }

    /// A metric given as a decimal `num / 10^places`, e.g. `(93, 2)` for 0.93.
    pub fn decimal(num: u64, places: u32) -> Self {
        Metric::ratio(num, 10u64.pow(places))
    }

    pub fn value(&self) -> f64 {
        self.exact.to_f64().expect("metric fits in f64")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMetrics {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

impl ClassMetrics {
    /// Metrics for one class from its own tp/fp/fn view.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = Metric::ratio(tp, tp + fp);
        let recall = Metric::ratio(tp, tp + fn_);
        // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn), which is also 0 whenever
        // either ratio defaulted to 0.
        let mut f1 = Metric::ratio(2 * tp, 2 * tp + fp + fn_);
        f1.degenerate |= precision.degenerate || recall.degenerate;
        ClassMetrics { precision, recall, f1 }
    }

    pub fn values(&self) -> MetricRow {
        MetricRow {
            precision: self.precision.value(),
            recall: self.recall.value(),
            f1: self.f1.value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prf {
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
}

/// Per-class metrics. The negative class swaps the roles: its true
/// positives are `tn`, its false positives `fn`, its false negatives `fp`.
pub fn prf(c: &ConfusionCounts) -> Prf {
    Prf {
        positive: ClassMetrics::from_counts(c.tp, c.fp, c.fn_),
        negative: ClassMetrics::from_counts(c.tn, c.fn_, c.fp),
    }
}

fn mean(a: &Metric, b: &Metric) -> Metric {
    Metric {
        exact: (&a.exact + &b.exact) / BigRational::from_integer(BigInt::from(2)),
        degenerate: a.degenerate || b.degenerate,
    }
}

/// Unweighted per-metric mean of the two classes. Macro-F1 is the mean of
/// the class F1 scores, not the F1 of the averaged precision and recall.
pub fn macro_average(positive: &ClassMetrics, negative: &ClassMetrics) -> ClassMetrics {
    ClassMetrics {
        precision: mean(&positive.precision, &negative.precision),
        recall: mean(&positive.recall, &negative.recall),
        f1: mean(&positive.f1, &negative.f1),
    }
}

/// Macro-F1 straight from counts.
pub fn macro_f1(c: &ConfusionCounts) -> f64 {
    let p = prf(c);
    macro_average(&p.positive, &p.negative).f1.value()
}

/// Full-precision metric values for one row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Anything that can label a document.
pub trait Classifier: Sync {
    fn predict(&self, doc: &Document) -> Result<Label>;
}

impl Classifier for Scorer {
    fn predict(&self, doc: &Document) -> Result<Label> {
        Ok(binarize(self.score(doc)?.raw, self.threshold()))
    }
}

/// Scores produced elsewhere, keyed by document id. Lets the harness
/// evaluate classifiers that cannot run in-process.
#[derive(Debug, Clone)]
pub struct PrecomputedScores {
    pub scores: HashMap<String, f64>,
    pub threshold: f64,
}

impl PrecomputedScores {
    /// Reads lines of `{"id": .., "score": ..}`.
    pub fn load(path: impl AsRef<Path>, threshold: f64) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            score: f64,
        }
        let mut scores = HashMap::new();
        for row in crate::record::JsonlReader::<Row>::open(path)? {
            let row = row?;
            scores.insert(row.id, row.score);
        }
        Ok(PrecomputedScores { scores, threshold })
    }
}

impl Classifier for PrecomputedScores {
    fn predict(&self, doc: &Document) -> Result<Label> {
        self.scores
            .get(&doc.id)
            .map(|s| binarize(*s, self.threshold))
            .ok_or_else(|| Error::InvalidInput(format!("no score for document {:?}", doc.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionMetrics {
    pub counts: ConfusionCounts,
    pub positive: MetricRow,
    pub negative: MetricRow,
    #[serde(rename = "macro")]
    pub macro_avg: MetricRow,
}

impl SectionMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let p = prf(&counts);
        SectionMetrics {
            counts,
            positive: p.positive.values(),
            negative: p.negative.values(),
            macro_avg: macro_average(&p.positive, &p.negative).values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SectionOutcome {
    Ok(SectionMetrics),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub classifier: String,
    #[serde(flatten)]
    pub outcome: SectionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_set: String,
    pub test_size: usize,
    pub threshold: f64,
    pub sections: Vec<ReportSection>,
}

/// Evaluates each classifier on `test`, truth labels being the test scores
/// binarized at `threshold`. A classifier that fails on any document is
/// reported as failed; the others are unaffected.
pub fn compare_classifiers(
    classifiers: &[(String, &dyn Classifier)],
    test: &[LabeledDoc],
    test_set: &str,
    threshold: f64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let truth: Vec<(String, Label)> = test
        .iter()
        .map(|l| (l.doc.id.clone(), binarize(l.score, threshold)))
        .collect();
    let sections = classifiers
        .iter()
        .map(|(name, clf)| {
            let preds: Result<Vec<(String, Label)>> = test
                .par_iter()
                .map(|l| Ok((l.doc.id.clone(), clf.predict(&l.doc)?)))
                .collect();
            let outcome = match preds.and_then(|p| confusion(&p, &truth)) {
                Ok(c) => SectionOutcome::Ok(SectionMetrics::from_counts(c)),
                Err(e) => {
                    log::warn!("classifier {name} failed: {e}");
                    SectionOutcome::Failed { error: e.to_string() }
                }
            };
            ReportSection {
                classifier: name.clone(),
                outcome,
            }
        })
        .collect();
    Ok(EvalReport {
        test_set: test_set.to_owned(),
        test_size: test.len(),
        threshold,
        sections,
    })
}

impl EvalReport {
    /// Aligned text table, one block per classifier, values to 2 decimals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Test set: {} ({} samples, threshold {})",
            self.test_set, self.test_size, self.threshold
        );
        let rule = "-".repeat(44);
        let _ = writeln!(s, "{rule}");
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10}", "Classifier", "Precision", "Recall", "F1-score");
        for sec in &self.sections {
            let _ = writeln!(s, "{rule}");
            let _ = writeln!(s, "{:^44}", sec.classifier);
            let _ = writeln!(s, "{rule}");
            match &sec.outcome {
                SectionOutcome::Ok(m) => {
                    for (label, row) in [("Positive", m.positive), ("Negative", m.negative), ("Macro F1", m.macro_avg)] {
                        let _ = writeln!(
                            s,
                            "{label:<14}{:>10.2}{:>10.2}{:>10.2}",
                            row.precision, row.recall, row.f1
                        );
                    }
                }
                SectionOutcome::Failed { error } => {
                    let _ = writeln!(s, "FAILED: {error}");
                }
            }
        }
        let _ = writeln!(s, "{rule}");
        s
    }

    /// Line-delimited machine form: a header line, then one line per section.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = serde_json::json!({
            "test_set": self.test_set,
            "test_size": self.test_size,
            "threshold": self.threshold,
        });
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for sec in &self.sections {
            out.push_str(&serde_json::to_string(sec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            test_set: String,
            test_size: usize,
            threshold: f64,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::InvalidInput("empty report".into()))?,
        )?;
        let sections = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ReportSection>, _>>()?;
        Ok(EvalReport {
            test_set: header.test_set,
            test_size: header.test_size,
            threshold: header.threshold,
            sections,
        })
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let body = self.to_jsonl()?;
        atomic_write(path.as_ref(), |w| w.write_all(body.as_bytes()))
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        let mut r = open_reader(path)?;
        loop {
            let mut line = String::new();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            text.push_str(&line);
        }
        Self::from_jsonl(&text)
    }
}
