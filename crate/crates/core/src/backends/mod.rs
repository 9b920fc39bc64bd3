//! Model backends: the multimodal LLM that writes the chain of thoughts and
//! the segmentation agent that turns text into a mask.
//!
//! Both sit behind narrow traits. Offline runs use [`ReplayMllm`] fixtures and
//! the [`KeywordMockSegmenter`]; live runs use [`RemoteMllm`] and a
//! [`SubprocessSegmenter`] speaking the line protocol in [`protocol`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_ref::ImageRef;
use crate::mask::BinaryMask;

mod cache;
mod mock;
pub mod protocol;
mod remote;
mod replay;
mod request;
mod subprocess;

pub use cache::{cache_wrap, CachedMllm};
pub use mock::{KeywordMockSegmenter, KeywordRule, MaskSpec, ScriptedMllm, SegmentCall};
pub use remote::{RemoteMllm, API_KEY_ENV, DEFAULT_ENDPOINT, DEFAULT_MODEL};
pub use replay::{RecordingMllm, ReplayMllm};
pub use request::{request_hash, MllmRequest, PromptPart};
pub use subprocess::SubprocessSegmenter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mllm,
    Segmenter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    pub concurrency_safe: bool,
    pub config: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, kind: BackendKind, concurrency_safe: bool) -> Self {
        Self {
            name: name.into(),
            kind,
            concurrency_safe,
            config: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }
}

pub trait MllmBackend: Send + Sync {
    fn complete(&self, request: &MllmRequest) -> Result<String>;

    fn descriptor(&self) -> BackendDescriptor;

    /// Cheap reachability check for health reporting.
    fn health(&self) -> Result<()> {
        Ok(())
    }
}

pub trait SegmenterBackend: Send + Sync {
    /// Returns a mask with the image's dimensions.
    fn segment_text(&self, image: &ImageRef, prompt: &str) -> Result<BinaryMask>;

    fn descriptor(&self) -> BackendDescriptor;

    fn health(&self) -> Result<()> {
        Ok(())
    }
}

impl<T: MllmBackend + ?Sized> MllmBackend for std::sync::Arc<T> {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        (**self).complete(request)
    }

    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn health(&self) -> Result<()> {
        (**self).health()
    }
}

impl<T: MllmBackend + ?Sized> MllmBackend for &T {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        (**self).complete(request)
    }

    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn health(&self) -> Result<()> {
        (**self).health()
    }
}

impl<T: SegmenterBackend + ?Sized> SegmenterBackend for std::sync::Arc<T> {
    fn segment_text(&self, image: &ImageRef, prompt: &str) -> Result<BinaryMask> {
        (**self).segment_text(image, prompt)
    }

    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn health(&self) -> Result<()> {
        (**self).health()
    }
}

/// Named set of backend descriptors; names are unique.
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    entries: Vec<BackendDescriptor>,
}

impl BackendRegistry {
    pub fn register(&mut self, descriptor: BackendDescriptor) -> Result<()> {
        if self.entries.iter().any(|d| d.name == descriptor.name) {
            return Err(Error::Config(format!(
                "backend name '{}' registered twice",
                descriptor.name
            )));
        }
        self.entries.push(descriptor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BackendDescriptor> {
        self.entries.iter().find(|d| d.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BackendDescriptor> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_duplicate_names() {
        let mut r = BackendRegistry::default();
        r.register(BackendDescriptor::new("replay", BackendKind::Mllm, true))
            .unwrap();
        r.register(BackendDescriptor::new("mock", BackendKind::Segmenter, true))
            .unwrap();
        assert!(r
            .register(BackendDescriptor::new("replay", BackendKind::Segmenter, true))
            .is_err());
        assert_eq!(r.get("mock").unwrap().kind, BackendKind::Segmenter);
        assert_eq!(r.iter().count(), 2);
    }
}
