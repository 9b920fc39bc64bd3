use std::io::Write;
use std::path::{Path, PathBuf};

use super::{request_hash, BackendDescriptor, MllmBackend, MllmRequest};
use crate::error::{Error, Result};

pub(crate) fn entry_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.txt"))
}

/// Writes `<dir>/<hash>.txt` through a temp file and rename, so concurrent
/// writers of the same key never leave a torn file behind.
pub(crate) fn write_entry(dir: &Path, hash: &str, text: &str) -> Result<()> {
    let mut tmp = tempfile::Builder::new()
        .prefix(".entry-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    tmp.write_all(text.as_bytes())
        .map_err(|e| Error::io(tmp.path(), e))?;
    let target = entry_path(dir, hash);
    tmp.persist(&target)
        .map_err(|e| Error::io(&target, e.error))?;
    Ok(())
}

/// Read-through, write-through completion cache in front of another backend.
pub struct CachedMllm<B> {
    inner: B,
    dir: PathBuf,
}

/// Wraps `backend` with a cache of `<cache_dir>/<request_hash>.txt` files.
pub fn cache_wrap<B: MllmBackend>(backend: B, cache_dir: impl Into<PathBuf>) -> Result<CachedMllm<B>> {
    let dir = cache_dir.into();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(CachedMllm { inner: backend, dir })
}

impl<B> CachedMllm<B> {
    pub fn cache_dir(&self) -> &Path {
        &self.dir
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: MllmBackend> MllmBackend for CachedMllm<B> {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        let hash = request_hash(request);
        let path = entry_path(&self.dir, &hash);
        match std::fs::read(&path) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(text) => return Ok(text),
                Err(_) => log::warn!("cache entry {} is not UTF-8, ignoring", path.display()),
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => log::warn!("cannot read cache entry {}: {e}", path.display()),
        }
        let text = self.inner.complete(request)?;
        write_entry(&self.dir, &hash, &text)?;
        Ok(text)
    }

    fn descriptor(&self) -> BackendDescriptor {
        let mut d = self.inner.descriptor();
        d.name = format!("cached({})", d.name);
        d.with("cache_dir", self.dir.display())
    }

    fn health(&self) -> Result<()> {
        self.inner.health()
    }
}
