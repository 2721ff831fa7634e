//! Frozen feature backbones.
//!
//! The head is trained on top of a fixed feature source. Two are provided:
//! hashed character n-gram counts (L2-normalized) and precomputed embeddings
//! read from a sidecar file keyed by document id, so vectors from any
//! external encoder can be dropped in.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::record::{Document, JsonlReader};

pub const DEFAULT_HASH_DIM: usize = 1 << 18;

/// Serializable description of a feature backbone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureExtractor {
    HashedCharNgrams {
        ngram_sizes: Vec<usize>,
        dim: usize,
        seed: u64,
    },
    PrecomputedEmbeddings {
        path: PathBuf,
        dim: usize,
    },
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::hashed(0)
    }
}

impl FeatureExtractor {
    /// Char 1-, 2- and 3-grams into 2^18 buckets.
    pub fn hashed(seed: u64) -> Self {
        FeatureExtractor::HashedCharNgrams {
            ngram_sizes: vec![1, 2, 3],
            dim: DEFAULT_HASH_DIM,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureExtractor::HashedCharNgrams { dim, .. } => *dim,
            FeatureExtractor::PrecomputedEmbeddings { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureExtractor::HashedCharNgrams { ngram_sizes, dim, .. } => {
                if *dim == 0 || ngram_sizes.is_empty() || ngram_sizes.contains(&0) {
                    return Err(Error::Config(format!("invalid hashed extractor {self:?}")));
                }
            }
            FeatureExtractor::PrecomputedEmbeddings { dim, .. } => {
                if *dim == 0 {
                    return Err(Error::Config("precomputed embedding dim is 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        SparseVector { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| dense[i as usize] * v)
            .sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }
}

/// Hashed char n-gram counts, L2-normalized. Empty text gives the zero vector.
pub fn hashed_ngram_features(text: &str, ngram_sizes: &[usize], dim: usize, seed: u64) -> SparseVector {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let chars = bounds.len() - 1;
    let mut buckets: Vec<u32> = Vec::with_capacity(chars * ngram_sizes.len());
    for &n in ngram_sizes {
        if chars < n {
            continue;
        }
        for i in 0..=chars - n {
            let gram = &text.as_bytes()[bounds[i]..bounds[i + n]];
            let h = xxh3_64_with_seed(gram, seed);
            buckets.push((h % dim as u64) as u32);
        }
    }
    buckets.sort_unstable();

    let mut v = SparseVector::default();
    for b in buckets {
        if v.indices.last() == Some(&b) {
            *v.values.last_mut().unwrap() += 1.0;
        } else {
            v.indices.push(b);
            v.values.push(1.0);
        }
    }
    let norm = v.norm();
    if norm > 0.0 {
        for x in &mut v.values {
            *x /= norm;
        }
    }
    v
}

#[derive(Deserialize)]
struct EmbeddingRow {
    id: String,
    embedding: Vec<f64>,
}

/// A loaded, ready-to-use feature source.
#[derive(Debug, Clone)]
pub enum Backbone {
    Hashed {
        ngram_sizes: Vec<usize>,
        dim: usize,
        seed: u64,
    },
    Precomputed {
        dim: usize,
        embeddings: HashMap<String, Vec<f64>>,
    },
}

impl Backbone {
    /// Instantiates the extractor; precomputed embeddings are read from the
    /// path recorded in the spec.
    pub fn load(fx: &FeatureExtractor) -> Result<Self> {
        fx.validate()?;
        match fx {
            FeatureExtractor::HashedCharNgrams {
                ngram_sizes,
                dim,
                seed,
            } => Ok(Backbone::Hashed {
                ngram_sizes: ngram_sizes.clone(),
                dim: *dim,
                seed: *seed,
            }),
            FeatureExtractor::PrecomputedEmbeddings { path, dim } => {
                Backbone::precomputed_from(path, *dim)
            }
        }
    }

    /// Reads a sidecar embeddings file: lines of `{"id": .., "embedding": [..]}`.
    pub fn precomputed_from(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut embeddings = HashMap::new();
        for row in JsonlReader::<EmbeddingRow>::open(path)? {
            let row = row?;
            if row.embedding.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "{}: embedding for {:?} has length {}, expected {dim}",
                    path.display(),
                    row.id,
                    row.embedding.len()
                )));
            }
            embeddings.insert(row.id, row.embedding);
        }
        Ok(Backbone::Precomputed { dim, embeddings })
    }

    pub fn dim(&self) -> usize {
        match self {
            Backbone::Hashed { dim, .. } | Backbone::Precomputed { dim, .. } => *dim,
        }
    }

    /// Whether this backbone produces vectors of the kind `fx` describes.
    /// Precomputed backbones match on dimension only, since the sidecar file
    /// may legitimately differ between training and scoring.
    pub fn compatible_with(&self, fx: &FeatureExtractor) -> bool {
        match (self, fx) {
            (
                Backbone::Hashed {
                    ngram_sizes,
                    dim,
                    seed,
                },
                FeatureExtractor::HashedCharNgrams {
                    ngram_sizes: n2,
                    dim: d2,
                    seed: s2,
                },
            ) => ngram_sizes == n2 && dim == d2 && seed == s2,
            (Backbone::Precomputed { dim, .. }, FeatureExtractor::PrecomputedEmbeddings { dim: d2, .. }) => {
                dim == d2
            }
            _ => false,
        }
    }

    pub fn features(&self, doc: &Document) -> Result<SparseVector> {
        match self {
            Backbone::Hashed {
                ngram_sizes,
                dim,
                seed,
            } => Ok(hashed_ngram_features(&doc.text, ngram_sizes, *dim, *seed)),
            Backbone::Precomputed { embeddings, .. } => embeddings
                .get(&doc.id)
                .map(|e| SparseVector::from_dense(e))
                .ok_or_else(|| Error::MissingEmbedding(doc.id.clone())),
        }
    }
}

/// Feature vector of one document under `backbone`.
pub fn extract_features(doc: &Document, backbone: &Backbone) -> Result<SparseVector> {
    backbone.features(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hashed() -> Backbone {
        Backbone::load(&FeatureExtractor::hashed(7)).unwrap()
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v = extract_features(&Document::new("e", ""), &hashed()).unwrap();
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn normalized_and_deterministic() {
        let b = hashed();
        for text in ["a", "你好世界", "the quick brown fox 跳过了懒狗", &"长".repeat(500)] {
            let v = extract_features(&Document::new("x", text), &b).unwrap();
            assert!((v.norm() - 1.0).abs() <= 1e-9, "{text}");
            assert!(v.indices.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(v, extract_features(&Document::new("y", text), &b).unwrap());
        }
    }

    #[test]
    fn counts_accumulate() {
        // "aa": 1-grams a,a ; 2-gram aa -> two buckets with counts 2 and 1.
        let v = hashed_ngram_features("aa", &[1, 2], 1 << 18, 0);
        let mut vals = v.values.clone();
        vals.sort_by(f64::total_cmp);
        let n = 5f64.sqrt();
        assert!((vals[0] - 1.0 / n).abs() < 1e-12 && (vals[1] - 2.0 / n).abs() < 1e-12);
    }

    #[test]
    fn order_of_documents_does_not_matter() {
        let b = hashed();
        let docs: Vec<Document> = (0..5)
            .map(|i| Document::new(format!("d{i}"), format!("文本{i}号内容")))
            .collect();
        let fwd: Vec<_> = docs.iter().map(|d| extract_features(d, &b).unwrap()).collect();
        let mut rev: Vec<_> = docs.iter().rev().map(|d| extract_features(d, &b).unwrap()).collect();
        rev.reverse();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn precomputed_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.jsonl");
        std::fs::write(&p, "{\"id\":\"a\",\"embedding\":[0.5,0.0,-1.0]}\n").unwrap();
        let b = Backbone::precomputed_from(&p, 3).unwrap();
        let v = extract_features(&Document::new("a", "ignored"), &b).unwrap();
        assert_eq!(v.to_dense(3), vec![0.5, 0.0, -1.0]);
        assert!(matches!(
            extract_features(&Document::new("zz", "x"), &b),
            Err(Error::MissingEmbedding(id)) if id == "zz"
        ));
        assert!(Backbone::precomputed_from(&p, 4).is_err());
    }
}
