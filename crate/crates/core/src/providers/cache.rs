//! Persistent embedding cache: one file per request content hash.
//!
//! Layout: `{cache_dir}/{sha256_hex}.bin` holding a little-endian u32
//! dimension followed by that many f32 values. Writes go through a
//! temporary file and rename, so concurrent writers never expose a
//! truncated entry; unparseable files are treated as misses.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::EmbeddingVector;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
pub struct EmbedCache {
    dir: PathBuf,
}

impl EmbedCache {
    pub fn new(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn entry_path(&self, key: &[u8; 32]) -> PathBuf {
        self.dir.join(format!("{}.bin", hex(key)))
    }

    pub fn read(&self, key: &[u8; 32]) -> Option<EmbeddingVector> {
        let bytes = std::fs::read(self.entry_path(key)).ok()?;
        if bytes.len() < 4 {
            return None;
        }
        let dim = u32::from_le_bytes(bytes[0..4].try_into().ok()?) as usize;
        if bytes.len() != 4 + dim * 4 {
            return None;
        }
        let values: Vec<f32> = bytes[4..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(EmbeddingVector {
            values,
            unit_norm: true,
        })
    }

    pub fn write(&self, key: &[u8; 32], vector: &EmbeddingVector) -> std::io::Result<()> {
        let mut bytes = Vec::with_capacity(4 + vector.values.len() * 4);
        bytes.extend_from_slice(&(vector.values.len() as u32).to_le_bytes());
        for v in &vector.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = self.dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, self.entry_path(key))
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbedCache::new(dir.path()).unwrap();
        let key = [7u8; 32];
        let v = EmbeddingVector::normalized(vec![0.1, -0.7, 0.3]).unwrap();
        cache.write(&key, &v).unwrap();
        let back = cache.read(&key).unwrap();
        assert_eq!(back.values, v.values);
        assert!(back.unit_norm);
    }

    #[test]
    fn miss_and_corrupt_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbedCache::new(dir.path()).unwrap();
        let key = [1u8; 32];
        assert!(cache.read(&key).is_none());
        std::fs::write(cache.entry_path(&key), b"torn").unwrap();
        assert!(cache.read(&key).is_none());
    }
}
