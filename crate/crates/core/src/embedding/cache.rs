use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Embedding, EmbeddingError, EmbeddingProvider};
use crate::image::Image;

/// File header of a cached vector; followed by `dim` as `u32` LE and then
/// `dim` little-endian `f32` values.
pub const CACHE_MAGIC: &[u8; 8] = b"TSREMB01";

/// On-disk memoization of another provider, one file per
/// `(provider_id, image content)` key.
///
/// Writes go to a temporary file that is renamed into place, so concurrent
/// writers never expose a torn file. A failed write logs a warning and the
/// freshly computed vector is still returned.
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn cache_dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, image: &Image) -> PathBuf {
        let mut hasher = Sha256::new();
        hasher.update(self.inner.provider_id().as_bytes());
        hasher.update([0u8]);
        hasher.update(image.content_hash());
        self.dir
            .join(format!("{}.emb", hex::encode(hasher.finalize())))
    }

    fn read(&self, path: &Path) -> Option<Embedding> {
        let bytes = std::fs::read(path).ok()?;
        let vector = decode_vector(&bytes)?;
        Embedding::new(self.inner.provider_id(), vector).ok()
    }

    fn write(&self, path: &Path, embedding: &Embedding) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&encode_vector(embedding.vector()))?;
        tmp.flush()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

pub(crate) fn encode_vector(vector: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * vector.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_vector(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
        return None;
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
    let body = &bytes[12..];
    if body.len() != dim * 4 {
        return None;
    }
    Some(
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect(),
    )
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn embed(&self, image: &Image) -> Result<Embedding, EmbeddingError> {
        let path = self.entry_path(image);
        if let Some(hit) = self.read(&path) {
            return Ok(hit);
        }
        let fresh = self.inner.embed(image)?;
        if let Err(e) = self.write(&path, &fresh) {
            log::warn!("embedding cache write to {} failed: {e}", path.display());
        }
        Ok(fresh)
    }
}
