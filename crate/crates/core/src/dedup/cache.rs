//! On-disk signature cache.
//!
//! Layout (little endian): magic `WCSC`, u32 format version, u32 K,
//! u64 seed, u32 shingle size, u64 entry count, then per entry a u32 id
//! length, the id bytes, a u64 hash of the document text and K u64 values.
//! A cache whose header does not match the current configuration is refused.

use std::collections::HashMap;
use std::io::{self, Read};
use std::path::Path;

use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::record::{atomic_write, open_reader};

use super::minhash::DedupSignature;
use super::DedupConfig;

const MAGIC: &[u8; 4] = b"WCSC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub num_perm: u32,
    pub seed: u64,
    pub shingle_n: u32,
}

impl CacheHeader {
    pub fn for_config(cfg: &DedupConfig) -> Self {
        CacheHeader {
            num_perm: cfg.num_perm as u32,
            seed: cfg.seed,
            shingle_n: cfg.shingle_n as u32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SignatureCache {
    header: CacheHeader,
    entries: HashMap<String, (u64, Vec<u64>)>,
}

pub(crate) fn text_hash(text: &str) -> u64 {
    xxh3_64(text.as_bytes())
}

impl SignatureCache {
    pub fn new(cfg: &DedupConfig) -> Self {
        SignatureCache {
            header: CacheHeader::for_config(cfg),
            entries: HashMap::new(),
        }
    }

    pub fn header(&self) -> CacheHeader {
        self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached signature for `doc_id`, if it was computed from the same text.
    pub fn get(&self, doc_id: &str, text: &str) -> Option<DedupSignature> {
        let (h, values) = self.entries.get(doc_id)?;
        (*h == text_hash(text)).then(|| DedupSignature {
            doc_id: doc_id.to_owned(),
            seed: self.header.seed,
            values: values.clone(),
        })
    }

    pub fn insert(&mut self, sig: &DedupSignature, text: &str) {
        debug_assert_eq!(sig.values.len(), self.header.num_perm as usize);
        self.entries
            .insert(sig.doc_id.clone(), (text_hash(text), sig.values.clone()));
    }

    /// Loads a cache, failing if its header differs from `cfg`'s.
    pub fn load(path: impl AsRef<Path>, cfg: &DedupConfig) -> Result<Self> {
        let path = path.as_ref();
        let bad = |message: String| Error::CacheFormat {
            path: path.to_path_buf(),
            message,
        };
        let mut r = open_reader(path)?;
        let io_err = |e: io::Error| Error::io(path, e);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(bad("not a signature cache".into()));
        }
        let version = read_u32(&mut r).map_err(io_err)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let found = CacheHeader {
            num_perm: read_u32(&mut r).map_err(io_err)?,
            seed: read_u64(&mut r).map_err(io_err)?,
            shingle_n: read_u32(&mut r).map_err(io_err)?,
        };
        let expected = CacheHeader::for_config(cfg);
        if found != expected {
            return Err(bad(format!(
                "header {found:?} does not match configuration {expected:?}"
            )));
        }
        let count = read_u64(&mut r).map_err(io_err)?;
        let k = found.num_perm as usize;
        let mut entries = HashMap::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(&mut r).map_err(io_err)? as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(io_err)?;
            let id = String::from_utf8(id).map_err(|e| bad(e.to_string()))?;
            let h = read_u64(&mut r).map_err(io_err)?;
            let mut values = Vec::with_capacity(k);
            for _ in 0..k {
                values.push(read_u64(&mut r).map_err(io_err)?);
            }
            entries.insert(id, (h, values));
        }
        Ok(SignatureCache {
            header: found,
            entries,
        })
    }

    /// Writes the cache atomically, entries sorted by id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        atomic_write(path.as_ref(), |w| {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&self.header.num_perm.to_le_bytes())?;
            w.write_all(&self.header.seed.to_le_bytes())?;
            w.write_all(&self.header.shingle_n.to_le_bytes())?;
            w.write_all(&(ids.len() as u64).to_le_bytes())?;
            for id in ids {
                let (h, values) = &self.entries[id];
                w.write_all(&(id.len() as u32).to_le_bytes())?;
                w.write_all(id.as_bytes())?;
                w.write_all(&h.to_le_bytes())?;
                for v in values {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Ok(())
        })
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedup::minhash::signature_for_text;

    #[test]
    fn round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sigs.bin");
        let cfg = DedupConfig::default();
        let sig = signature_for_text("d1", "缓存的文本内容", &cfg.hash_family(), cfg.shingle_n).unwrap();
        let mut cache = SignatureCache::new(&cfg);
        cache.insert(&sig, "缓存的文本内容");
        cache.save(&p).unwrap();

        let back = SignatureCache::load(&p, &cfg).unwrap();
        assert_eq!(back.get("d1", "缓存的文本内容"), Some(sig));
        assert_eq!(back.get("d1", "changed"), None);

        let other = DedupConfig {
            seed: 99,
            ..cfg.clone()
        };
        assert!(matches!(
            SignatureCache::load(&p, &other),
            Err(Error::CacheFormat { .. })
        ));
        let other = DedupConfig {
            shingle_n: 3,
            ..cfg
        };
        assert!(SignatureCache::load(&p, &other).is_err());
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sigs.bin");
        std::fs::write(&p, b"nope, not a cache").unwrap();
        assert!(SignatureCache::load(&p, &DedupConfig::default()).is_err());
    }
}
