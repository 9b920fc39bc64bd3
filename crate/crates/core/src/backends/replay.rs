use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::cache::{entry_path, write_entry};
use super::{request_hash, BackendDescriptor, BackendKind, MllmBackend, MllmRequest};
use crate::error::{Error, Result};

enum Fixtures {
    Dir(PathBuf),
    Map(HashMap<String, String>),
}

/// Serves recorded completions keyed by [`request_hash`].
pub struct ReplayMllm {
    fixtures: Fixtures,
}

impl ReplayMllm {
    /// Fixtures are `<dir>/<request_hash>.txt`.
    pub fn from_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self {
            fixtures: Fixtures::Dir(dir),
        })
    }

    pub fn from_map(fixtures: HashMap<String, String>) -> Self {
        Self {
            fixtures: Fixtures::Map(fixtures),
        }
    }
}

impl MllmBackend for ReplayMllm {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        let hash = request_hash(request);
        match &self.fixtures {
            Fixtures::Map(map) => map.get(&hash).cloned(),
            Fixtures::Dir(dir) => std::fs::read_to_string(entry_path(dir, &hash)).ok(),
        }
        .ok_or(Error::FixtureMissing { hash })
    }

    fn descriptor(&self) -> BackendDescriptor {
        let d = BackendDescriptor::new("replay", BackendKind::Mllm, true);
        match &self.fixtures {
            Fixtures::Dir(dir) => d.with("fixture_dir", dir.display()),
            Fixtures::Map(map) => d.with("fixtures", map.len()),
        }
    }

    fn health(&self) -> Result<()> {
        match &self.fixtures {
            Fixtures::Dir(dir) if !dir.is_dir() => Err(Error::Config(format!(
                "fixture directory {} vanished",
                dir.display()
            ))),
            _ => Ok(()),
        }
    }
}

/// Forwards every request and stores the `(hash, text)` pair as a replay fixture.
pub struct RecordingMllm<B> {
    inner: B,
    fixture_dir: PathBuf,
}

impl<B: MllmBackend> RecordingMllm<B> {
    pub fn new(inner: B, fixture_dir: impl Into<PathBuf>) -> Result<Self> {
        let fixture_dir = fixture_dir.into();
        std::fs::create_dir_all(&fixture_dir).map_err(|e| Error::io(&fixture_dir, e))?;
        Ok(Self { inner, fixture_dir })
    }

    pub fn fixture_dir(&self) -> &Path {
        &self.fixture_dir
    }
}

impl<B: MllmBackend> MllmBackend for RecordingMllm<B> {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        let text = self.inner.complete(request)?;
        write_entry(&self.fixture_dir, &request_hash(request), &text)?;
        Ok(text)
    }

    fn descriptor(&self) -> BackendDescriptor {
        let inner = self.inner.descriptor();
        BackendDescriptor::new(
            format!("record({})", inner.name),
            BackendKind::Mllm,
            inner.concurrency_safe,
        )
        .with("fixture_dir", self.fixture_dir.display())
    }

    fn health(&self) -> Result<()> {
        self.inner.health()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{PromptPart, ScriptedMllm};
    use crate::image_ref::ImageRef;
    use image::{DynamicImage, RgbImage};

    fn request(text: &str) -> MllmRequest {
        let img = ImageRef::from_dynamic(&DynamicImage::ImageRgb8(RgbImage::new(3, 3))).unwrap();
        MllmRequest::new(
            "sys",
            vec![PromptPart::Text(text.into()), PromptPart::Image(img)],
            0.5,
            2000,
        )
        .unwrap()
    }

    #[test]
    fn replay_hit_and_miss() {
        let req = request("describe");
        let h1 = request_hash(&req);
        let replay = ReplayMllm::from_map(HashMap::from([(h1.clone(), "- Summary: S.".into())]));
        assert_eq!(replay.complete(&req).unwrap(), "- Summary: S.");

        let other = request("something else");
        match replay.complete(&other) {
            Err(Error::FixtureMissing { hash }) => assert_eq!(hash, request_hash(&other)),
            r => panic!("expected fixture miss, got {r:?}"),
        }
    }

    #[test]
    fn recording_stores_fixture_that_replays() {
        let dir = tempfile::tempdir().unwrap();
        let remote = ScriptedMllm::constant("- Q?: A.\n- Summary: a camouflaged flatfish.");
        let rec = RecordingMllm::new(&remote, dir.path()).unwrap();
        let req = request("describe");
        let text = rec.complete(&req).unwrap();

        let stored =
            std::fs::read_to_string(dir.path().join(format!("{}.txt", request_hash(&req)))).unwrap();
        assert_eq!(stored, text);
        assert!(stored.contains("camouflaged flatfish"));

        let replay = ReplayMllm::from_dir(dir.path()).unwrap();
        assert_eq!(replay.complete(&req).unwrap(), text);
    }

    #[test]
    fn missing_fixture_dir_is_config_error() {
        assert!(matches!(
            ReplayMllm::from_dir("/definitely/not/here"),
            Err(Error::Config(_))
        ));
    }
}
