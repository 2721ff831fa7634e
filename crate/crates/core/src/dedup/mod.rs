//! Document-level near-duplicate removal with MinHash and LSH banding.
//!
//! Dedup runs in two passes. The first computes a signature and band keys for
//! every document (in parallel). The second groups documents by band key,
//! verifies each candidate pair against the similarity threshold, and merges
//! verified pairs in a union-find forest. Each resulting cluster keeps the
//! member with the smallest `(timestamp, id)`; the rest are removed with
//! reason `dup_of:<winner id>`.

mod cache;
mod lsh;
mod minhash;
mod union_find;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Document, FilterVerdict, Stage};

pub use cache::{CacheHeader, SignatureCache};
pub use lsh::{candidate_probability, lsh_band_keys, s_curve_threshold};
pub use minhash::{
    estimate_jaccard, exact_jaccard, minhash_signature, shingle, signature_for_text,
    DedupSignature, HashFamily,
};
pub use union_find::UnionFind;

/// How candidate pairs are confirmed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    /// Compare signatures (no texts needed).
    #[default]
    Estimate,
    /// Recompute shingle sets and compare them exactly.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub shingle_n: usize,
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub similarity_threshold: f64,
    pub seed: u64,
    pub verification: Verification,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            shingle_n: 5,
            num_perm: 128,
            bands: 16,
            rows: 8,
            similarity_threshold: 0.70,
            seed: 0x5eed,
            verification: Verification::Estimate,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shingle_n == 0 {
            return Err(Error::Config("dedup.shingle_n must be >= 1".into()));
        }
        if self.num_perm == 0 || self.bands * self.rows != self.num_perm {
            return Err(Error::Config(format!(
                "dedup.bands ({}) x dedup.rows ({}) must equal dedup.num_perm ({})",
                self.bands, self.rows, self.num_perm
            )));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "dedup.similarity_threshold {} outside (0, 1]",
                self.similarity_threshold
            )));
        }
        Ok(())
    }

    pub fn hash_family(&self) -> HashFamily {
        HashFamily::new(self.seed, self.num_perm)
    }
}

/// Partition of a corpus's doc ids into duplicate clusters.
#[derive(Debug, Clone)]
pub struct DuplicateClusters {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    root: Vec<usize>,
    /// Winner index per root index.
    winner: HashMap<usize, usize>,
}

impl DuplicateClusters {
    fn build(ids: Vec<String>, mut uf: UnionFind, timestamps: &[i64]) -> Self {
        let root = uf.roots();
        let key = |i: usize| (timestamps[i], &ids[i]);
        let mut winner: HashMap<usize, usize> = HashMap::new();
        for (i, &r) in root.iter().enumerate() {
            winner
                .entry(r)
                .and_modify(|w| {
                    if key(i) < key(*w) {
                        *w = i;
                    }
                })
                .or_insert(i);
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        DuplicateClusters {
            ids,
            index,
            root,
            winner,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.winner.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn same_cluster(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.root[i] == self.root[j],
            _ => false,
        }
    }

    /// The kept member of `id`'s cluster.
    pub fn winner(&self, id: &str) -> Option<&str> {
        let i = *self.index.get(id)?;
        Some(&self.ids[self.winner[&self.root[i]]])
    }

    /// All clusters, each sorted by id, ordered by their smallest id.
    pub fn clusters(&self) -> Vec<Vec<&str>> {
        let mut groups: HashMap<usize, Vec<&str>> = HashMap::new();
        for (i, &r) in self.root.iter().enumerate() {
            groups.entry(r).or_default().push(&self.ids[i]);
        }
        let mut out: Vec<Vec<&str>> = groups
            .into_values()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Result of deduplicating a corpus.
#[derive(Debug)]
pub struct DedupOutcome {
    /// Cluster winners and untouched documents, sorted by id.
    pub kept: Vec<Document>,
    /// Removed documents with their verdicts, sorted by id.
    pub removed: Vec<(Document, FilterVerdict)>,
    pub clusters: DuplicateClusters,
    /// Ids of documents that had no text to sign and were passed through.
    pub empty: Vec<String>,
}

/// Computes (or fetches from `cache`) the signature of every document.
/// Documents with empty text map to `None`.
pub fn compute_signatures(
    docs: &[Document],
    cfg: &DedupConfig,
    cache: Option<&SignatureCache>,
) -> Vec<Option<DedupSignature>> {
    let family = cfg.hash_family();
    docs.par_iter()
        .map(|d| {
            if let Some(sig) = cache.and_then(|c| c.get(&d.id, &d.text)) {
                return Some(sig);
            }
            signature_for_text(&d.id, &d.text, &family, cfg.shingle_n).ok()
        })
        .collect()
}

/// Candidate pairs that share at least one band key, closed under the
/// verification rule, as a union-find over document indices.
fn cluster_indices(
    docs: &[Document],
    sigs: &[Option<DedupSignature>],
    cfg: &DedupConfig,
) -> Result<UnionFind> {
    let mut keyed: Vec<(u32, u64, u32)> = sigs
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
        .flat_map_iter(|(i, s)| {
            lsh_band_keys(s, cfg)
                .into_iter()
                .enumerate()
                .map(move |(b, k)| (b as u32, k, i as u32))
        })
        .collect();
    keyed.par_sort_unstable();

    let mut uf = UnionFind::new(docs.len());
    let mut exact_cache: HashMap<usize, std::collections::HashSet<String>> = HashMap::new();
    let mut start = 0;
    while start < keyed.len() {
        let (band, key, _) = keyed[start];
        let mut end = start + 1;
        while end < keyed.len() && keyed[end].0 == band && keyed[end].1 == key {
            end += 1;
        }
        for x in start..end {
            for y in x + 1..end {
                let (i, j) = (keyed[x].2 as usize, keyed[y].2 as usize);
                // Merging an already-connected pair is a no-op, so skipping
                // its verification leaves the closure unchanged.
                if uf.connected(i, j) {
                    continue;
                }
                let similar = match cfg.verification {
                    Verification::Estimate => {
                        let (a, b) = (sigs[i].as_ref().unwrap(), sigs[j].as_ref().unwrap());
                        estimate_jaccard(a, b)? >= cfg.similarity_threshold
                    }
                    Verification::Exact => {
                        for k in [i, j] {
                            exact_cache
                                .entry(k)
                                .or_insert_with(|| shingle(&docs[k].text, cfg.shingle_n));
                        }
                        exact_jaccard(&exact_cache[&i], &exact_cache[&j]) >= cfg.similarity_threshold
                    }
                };
                if similar {
                    uf.union(i, j);
                }
            }
        }
        start = end;
    }
    Ok(uf)
}

/// Removes near-duplicates from `docs`. Document ids must be unique.
pub fn dedup_corpus(docs: Vec<Document>, cfg: &DedupConfig) -> Result<DedupOutcome> {
    dedup_corpus_cached(docs, cfg, None)
}

/// [`dedup_corpus`] with an optional signature cache that is consulted and
/// then updated with every newly computed signature.
pub fn dedup_corpus_cached(
    docs: Vec<Document>,
    cfg: &DedupConfig,
    mut cache: Option<&mut SignatureCache>,
) -> Result<DedupOutcome> {
    cfg.validate()?;
    {
        let mut seen = std::collections::HashSet::with_capacity(docs.len());
        if let Some(d) = docs.iter().find(|d| !seen.insert(d.id.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate doc id {:?}", d.id)));
        }
    }
    if let Some(c) = cache.as_deref() {
        if c.header() != CacheHeader::for_config(cfg) {
            return Err(Error::Config("signature cache header does not match dedup config".into()));
        }
    }

    let sigs = compute_signatures(&docs, cfg, cache.as_deref());
    let mut empty = Vec::new();
    for (d, s) in docs.iter().zip(&sigs) {
        match s {
            Some(s) => {
                if let Some(c) = cache.as_deref_mut() {
                    c.insert(s, &d.text);
                }
            }
            None => {
                log::warn!("dedup: document {:?} has empty text; passing it through", d.id);
                empty.push(d.id.clone());
            }
        }
    }

    let uf = cluster_indices(&docs, &sigs, cfg)?;
    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let timestamps: Vec<i64> = docs.iter().map(Document::sort_timestamp).collect();
    let clusters = DuplicateClusters::build(ids, uf, &timestamps);

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for doc in docs {
        let w = clusters.winner(&doc.id).expect("every doc is clustered");
        if w == doc.id {
            kept.push(doc);
        } else {
            let v = FilterVerdict::reject(Stage::Dedup, format!("dup_of:{w}"));
            removed.push((doc, v));
        }
    }
    kept.sort_by(|a, b| a.id.cmp(&b.id));
    removed.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok(DedupOutcome {
        kept,
        removed,
        clusters,
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "数据清洗是构建高质量语料库的关键步骤，它包括去除重复内容、过滤低质量文本以及规范化字符编码。研究人员通常会先进行安全过滤，再进行文本抽取和清洗。";

    #[test]
    fn config_validation() {
        assert!(DedupConfig::default().validate().is_ok());
        let bad = DedupConfig {
            bands: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DedupConfig {
            similarity_threshold: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exact_duplicates_keep_the_earliest() {
        let docs = vec![
            Document::new("b", BASE).with_timestamp(10),
            Document::new("a", BASE).with_timestamp(20),
            Document::new("c", "完全不同的另一篇文章，讨论天气和城市交通状况。"),
        ];
        let out = dedup_corpus(docs, &DedupConfig::default()).unwrap();
        let kept: Vec<_> = out.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(kept, vec!["b", "c"]);
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].0.id, "a");
        assert_eq!(out.removed[0].1.reason, "dup_of:b");
        assert_eq!(out.clusters.winner("a"), Some("b"));
        assert_eq!(out.clusters.num_clusters(), 2);
    }

    #[test]
    fn missing_timestamp_sorts_first_then_id() {
        let docs = vec![
            Document::new("z", BASE).with_timestamp(5),
            Document::new("y", BASE),
            Document::new("x", BASE).with_timestamp(0),
        ];
        let out = dedup_corpus(docs, &DedupConfig::default()).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].id, "x");
    }

    #[test]
    fn appended_sentence_is_a_near_duplicate() {
        let near = format!("{BASE}此外，还需要人工抽检结果。");
        let exact = exact_jaccard(&shingle(BASE, 5), &shingle(&near, 5));
        assert!(exact >= 0.8, "{exact}");
        for verification in [Verification::Estimate, Verification::Exact] {
            let cfg = DedupConfig {
                verification,
                ..Default::default()
            };
            let docs = vec![Document::new("a", BASE), Document::new("b", near.clone())];
            let out = dedup_corpus(docs, &cfg).unwrap();
            assert!(out.clusters.same_cluster("a", "b"), "{verification:?}");
        }
    }

    #[test]
    fn empty_documents_pass_through() {
        let docs = vec![Document::new("e", ""), Document::new("f", "")];
        let out = dedup_corpus(docs, &DedupConfig::default()).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.empty, vec!["e", "f"]);
        assert!(!out.clusters.same_cluster("e", "f"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let docs = vec![Document::new("a", "x"), Document::new("a", "y")];
        assert!(dedup_corpus(docs, &DedupConfig::default()).is_err());
    }

    #[test]
    fn cache_is_filled_and_reused() {
        let cfg = DedupConfig::default();
        let mut cache = SignatureCache::new(&cfg);
        let docs = vec![Document::new("a", BASE), Document::new("b", "另一篇")];
        let first = dedup_corpus_cached(docs.clone(), &cfg, Some(&mut cache)).unwrap();
        assert_eq!(cache.len(), 2);
        let second = dedup_corpus_cached(docs, &cfg, Some(&mut cache)).unwrap();
        assert_eq!(first.kept, second.kept);
    }
}
