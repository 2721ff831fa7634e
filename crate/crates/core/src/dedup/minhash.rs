use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};

use super::DedupConfig;

/// Set of contiguous character n-grams.
///
/// Windows are taken over Unicode scalar values. Text shorter than `n`
/// yields the whole text as its only shingle; empty text yields nothing.
pub fn shingle(text: &str, n: usize) -> HashSet<String> {
    assert!(n >= 1, "shingle size must be positive");
    let mut out = HashSet::new();
    for_each_window(text, n, |w| {
        out.insert(w.to_owned());
    });
    out
}

/// Calls `f` on every n-char window of `text` (or the whole text when it is
/// shorter than `n`), in order, duplicates included.
pub(crate) fn for_each_window<'a>(text: &'a str, n: usize, mut f: impl FnMut(&'a str)) {
    if text.is_empty() {
        return;
    }
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let chars = bounds.len() - 1;
    if chars < n {
        f(text);
        return;
    }
    for i in 0..=chars - n {
        f(&text[bounds[i]..bounds[i + n]]);
    }
}

#[inline]
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

#[inline]
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The K hash functions `h_i(s) = fmix64(xxh3(s) ^ key_i)`, with `key_i`
/// drawn from a splitmix64 stream seeded by `(seed, i)`.
#[derive(Debug, Clone)]
pub struct HashFamily {
    seed: u64,
    keys: Vec<u64>,
}

impl HashFamily {
    pub fn new(seed: u64, num_perm: usize) -> Self {
        let keys = (0..num_perm as u64)
            .map(|i| splitmix64(seed ^ splitmix64(i)))
            .collect();
        HashFamily { seed, keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    fn update(&self, mins: &mut [u64], shingle: &str) {
        let base = xxh3_64(shingle.as_bytes());
        for (m, &k) in mins.iter_mut().zip(&self.keys) {
            let h = fmix64(base ^ k);
            if h < *m {
                *m = h;
            }
        }
    }

    /// Value of the i-th hash function on one shingle.
    pub fn hash(&self, i: usize, shingle: &str) -> u64 {
        fmix64(xxh3_64(shingle.as_bytes()) ^ self.keys[i])
    }
}

/// A document's MinHash signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupSignature {
    pub doc_id: String,
    pub seed: u64,
    pub values: Vec<u64>,
}

/// `values[i] = min over shingles of h_i(shingle)`.
pub fn minhash_signature(
    doc_id: &str,
    shingles: &HashSet<String>,
    cfg: &DedupConfig,
) -> Result<DedupSignature> {
    if shingles.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let family = cfg.hash_family();
    let mut values = vec![u64::MAX; family.len()];
    for s in shingles {
        family.update(&mut values, s);
    }
    Ok(DedupSignature {
        doc_id: doc_id.to_owned(),
        seed: cfg.seed,
        values,
    })
}

/// Signature straight from text, without materializing the shingle set.
/// Equal to `minhash_signature(id, &shingle(text, n), cfg)`.
pub fn signature_for_text(
    doc_id: &str,
    text: &str,
    family: &HashFamily,
    shingle_n: usize,
) -> Result<DedupSignature> {
    if text.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut values = vec![u64::MAX; family.len()];
    // Repeated windows only re-apply an idempotent min.
    for_each_window(text, shingle_n, |w| family.update(&mut values, w));
    Ok(DedupSignature {
        doc_id: doc_id.to_owned(),
        seed: family.seed,
        values,
    })
}

/// Fraction of signature positions that agree.
pub fn estimate_jaccard(a: &DedupSignature, b: &DedupSignature) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::IncompatibleSignatures(format!(
            "K={} vs K={}",
            a.values.len(),
            b.values.len()
        )));
    }
    if a.seed != b.seed {
        return Err(Error::IncompatibleSignatures(format!(
            "seed {} vs seed {}",
            a.seed, b.seed
        )));
    }
    if a.values.is_empty() {
        return Err(Error::IncompatibleSignatures("empty signature".into()));
    }
    let same = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    Ok(same as f64 / a.values.len() as f64)
}

/// Exact Jaccard similarity of two sets; 1.0 for two empty sets.
pub fn exact_jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}
