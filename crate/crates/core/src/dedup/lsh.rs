use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::minhash::DedupSignature;
use super::DedupConfig;

/// One key per band: a stable hash of the band index and its row slice.
/// Signatures with equal row slices in band `b` get equal keys for `b`.
pub fn lsh_band_keys(sig: &DedupSignature, cfg: &DedupConfig) -> Vec<u64> {
    assert_eq!(
        cfg.bands * cfg.rows,
        sig.values.len(),
        "bands x rows must equal the signature length"
    );
    let mut buf = Vec::with_capacity(cfg.rows * 8);
    sig.values
        .chunks_exact(cfg.rows)
        .enumerate()
        .map(|(b, rows)| {
            buf.clear();
            for v in rows {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            xxh3_64_with_seed(&buf, b as u64)
        })
        .collect()
}

/// Probability that a pair with Jaccard `s` shares at least one band:
/// `1 - (1 - s^R)^B`.
pub fn candidate_probability(s: f64, bands: usize, rows: usize) -> f64 {
    1.0 - (1.0 - s.powi(rows as i32)).powi(bands as i32)
}

/// Similarity at which the banding S-curve is steepest, `(1/B)^(1/R)`.
pub fn s_curve_threshold(bands: usize, rows: usize) -> f64 {
    (1.0 / bands as f64).powf(1.0 / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(values: Vec<u64>) -> DedupSignature {
        DedupSignature {
            doc_id: "x".into(),
            seed: 0,
            values,
        }
    }

    #[test]
    fn shape_and_determinism() {
        let cfg = DedupConfig::default();
        let s = sig((0..128).collect());
        let keys = lsh_band_keys(&s, &cfg);
        assert_eq!(keys.len(), 16);
        assert_eq!(keys, lsh_band_keys(&s.clone(), &cfg));
    }

    #[test]
    fn equal_band_slices_give_equal_keys() {
        let cfg = DedupConfig::default();
        let a: Vec<u64> = (0..128).collect();
        let mut b = a.clone();
        b[127] = 9999; // only the last band differs
        let (ka, kb) = (lsh_band_keys(&sig(a), &cfg), lsh_band_keys(&sig(b), &cfg));
        assert_eq!(ka[..15], kb[..15]);
        assert_ne!(ka[15], kb[15]);
    }

    #[test]
    fn same_rows_in_different_bands_differ() {
        let cfg = DedupConfig::default();
        let keys = lsh_band_keys(&sig(vec![7; 128]), &cfg);
        let distinct: std::collections::HashSet<_> = keys.iter().collect();
        assert_eq!(distinct.len(), 16);
    }

    #[test]
    fn fully_different_signatures_share_no_key() {
        let cfg = DedupConfig::default();
        // With every position different, each band key is an independent
        // 64-bit hash, so a shared key has probability about 16 * 2^-64.
        for t in 0..200u64 {
            let a: Vec<u64> = (0..128).map(|i| i * 2 + t * 1000).collect();
            let b: Vec<u64> = (0..128).map(|i| i * 2 + 1 + t * 1000).collect();
            let ka = lsh_band_keys(&sig(a), &cfg);
            let kb = lsh_band_keys(&sig(b), &cfg);
            assert!(ka.iter().zip(&kb).all(|(x, y)| x != y));
        }
    }

    #[test]
    fn s_curve_operating_point() {
        let t = s_curve_threshold(16, 8);
        assert!((t - 0.7071).abs() < 1e-3, "{t}");
        assert!(candidate_probability(0.9, 16, 8) > 0.999);
        assert!(candidate_probability(0.3, 16, 8) < 0.002);
    }
}
