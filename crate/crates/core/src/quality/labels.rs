//! Labeled sets: joining annotations to documents, splitting, agreement.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::record::{read_records, write_records, AnnotationRecord, Document};

/// Test fraction mirroring a 140:14 train/test ratio.
pub const DEFAULT_TEST_FRACTION: f64 = 14.0 / 154.0;

/// A document with its target score. On disk it is an ordinary document
/// record carrying the score as `meta.score`; a top-level numeric `score`
/// field is accepted on input too.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDoc {
    pub doc: Document,
    pub score: f64,
}

pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledDoc>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (n, doc) in read_records(path)?.enumerate() {
        let mut doc = doc?;
        let score = doc
            .meta
            .remove("score")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|s| (0.0..=5.0).contains(s))
            .ok_or_else(|| Error::Record {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("document {:?} has no numeric score in [0,5]", doc.id),
            })?;
        out.push(LabeledDoc { doc, score });
    }
    Ok(out)
}

pub fn write_labeled(items: &[LabeledDoc], path: impl AsRef<Path>) -> Result<usize> {
    let docs = items.iter().map(|l| {
        let mut d = l.doc.clone();
        d.meta.insert("score".into(), l.score.to_string());
        d
    });
    write_records(docs, path)
}

/// Attaches annotation scores to documents. Documents without an annotation
/// are dropped; annotations without a document are an error.
pub fn join_annotations(docs: &[Document], records: &[AnnotationRecord]) -> Result<Vec<LabeledDoc>> {
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    records
        .iter()
        .map(|r| {
            by_id
                .get(r.doc_id.as_str())
                .map(|d| LabeledDoc {
                    doc: (*d).clone(),
                    score: r.score as f64,
                })
                .ok_or_else(|| Error::InvalidInput(format!("annotation for unknown document {:?}", r.doc_id)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    /// Fraction of shared documents with identical scores.
    pub exact: f64,
    /// Fraction whose scores differ by at most one point.
    pub within_one: f64,
    pub compared: usize,
}

fn index(records: &[AnnotationRecord]) -> Result<HashMap<&str, u8>> {
    let mut m = HashMap::with_capacity(records.len());
    for r in records {
        if m.insert(r.doc_id.as_str(), r.score).is_some() {
            return Err(Error::InvalidInput(format!("doc_id {:?} annotated twice in one set", r.doc_id)));
        }
    }
    Ok(m)
}

/// Agreement between two annotation sets over their shared doc ids.
pub fn agreement_rate(a: &[AnnotationRecord], b: &[AnnotationRecord]) -> Result<Agreement> {
    let (a, b) = (index(a)?, index(b)?);
    let (mut n, mut exact, mut near) = (0usize, 0usize, 0usize);
    for (id, sa) in &a {
        if let Some(sb) = b.get(id) {
            n += 1;
            exact += (sa == sb) as usize;
            near += (sa.abs_diff(*sb) <= 1) as usize;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("annotation sets share no doc_id".into()));
    }
    Ok(Agreement {
        exact: exact as f64 / n as f64,
        within_one: near as f64 / n as f64,
        compared: n,
    })
}

/// Number of test items for `n` items at `fraction`: `round(n * fraction)`,
/// kept within `[1, n - 1]` so neither side is empty.
pub fn test_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Seeded shuffle split. Both halves keep the input order.
pub fn split_train_test<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot split {n} item(s)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..test_size(n, test_fraction)] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (item, t) in items.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}
