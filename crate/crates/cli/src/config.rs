//! Backend selection shared by the CLI and the HTTP service.
//!
//! ```toml
//! mllm = "replay"            # replay | remote | record
//! fixture_dir = "fixtures"
//! cache_dir = "cache"        # optional response cache
//! segmenter = "keyword-mock" # keyword-mock | lisa
//! mock_rules = ["flatfish=rect:30,20,52,32"]
//! segmenter_command = ["python3", "lisa_agent.py"]
//! port = 8080
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thinkfirst_core::backends::{
    cache_wrap, KeywordMockSegmenter, KeywordRule, RecordingMllm, RemoteMllm, ReplayMllm, SubprocessSegmenter,
    DEFAULT_ENDPOINT, DEFAULT_MODEL,
};
use thinkfirst_core::cot::{OnFailure, RetryPolicy};
use thinkfirst_core::{Backends, Error, MllmBackend, Pipeline, PromptTemplates, Result, SegmenterBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MllmKind {
    #[default]
    Replay,
    Remote,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SegmenterKind {
    #[default]
    KeywordMock,
    Lisa,
}

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub mllm: MllmKind,
    pub segmenter: SegmenterKind,
    pub fixture_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    /// Session log: transcripts and one directory per run.
    pub log_dir: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub mock_rules: Vec<String>,
    pub segmenter_command: Vec<String>,
    pub max_attempts: u32,
    pub degraded_on_failure: bool,
    pub port: u16,
    pub max_image_bytes: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            mllm: MllmKind::Replay,
            segmenter: SegmenterKind::KeywordMock,
            fixture_dir: None,
            cache_dir: None,
            prompt_dir: None,
            log_dir: None,
            endpoint: DEFAULT_ENDPOINT.into(),
            model: DEFAULT_MODEL.into(),
            mock_rules: Vec::new(),
            segmenter_command: Vec::new(),
            max_attempts: RetryPolicy::default().max_attempts,
            degraded_on_failure: false,
            port: DEFAULT_PORT,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: CliConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [
            &mut config.fixture_dir,
            &mut config.cache_dir,
            &mut config.prompt_dir,
            &mut config.log_dir,
        ]
        .into_iter()
        .flatten()
        {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mllm {
            MllmKind::Replay | MllmKind::Record if self.fixture_dir.is_none() => {
                return Err(Error::Config(format!(
                    "mllm backend '{}' needs a fixture directory",
                    self.mllm_name()
                )));
            }
            _ => {}
        }
        if self.segmenter == SegmenterKind::Lisa && self.segmenter_command.is_empty() {
            return Err(Error::Config("segmenter 'lisa' needs segmenter_command".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    fn mllm_name(&self) -> &'static str {
        match self.mllm {
            MllmKind::Replay => "replay",
            MllmKind::Remote => "remote",
            MllmKind::Record => "record",
        }
    }

    pub fn build_mllm(&self) -> Result<Arc<dyn MllmBackend>> {
        self.validate()?;
        let remote = || RemoteMllm::from_env(self.endpoint.clone(), self.model.clone());
        let backend: Arc<dyn MllmBackend> = match (self.mllm, &self.fixture_dir) {
            (MllmKind::Replay, Some(dir)) => Arc::new(ReplayMllm::from_dir(dir)?),
            (MllmKind::Record, Some(dir)) => Arc::new(RecordingMllm::new(remote()?, dir)?),
            (MllmKind::Remote, _) => Arc::new(remote()?),
            _ => unreachable!("validated above"),
        };
        match &self.cache_dir {
            Some(dir) => Ok(Arc::new(cache_wrap(backend, dir)?)),
            None => Ok(backend),
        }
    }

    pub fn build_segmenter(&self) -> Result<Arc<dyn SegmenterBackend>> {
        self.validate()?;
        Ok(match self.segmenter {
            SegmenterKind::KeywordMock => Arc::new(KeywordMockSegmenter::new(self.rules()?)),
            SegmenterKind::Lisa => Arc::new(SubprocessSegmenter::new("lisa", self.segmenter_command.clone())?),
        })
    }

    pub fn rules(&self) -> Result<Vec<KeywordRule>> {
        self.mock_rules.iter().map(|r| r.parse()).collect()
    }

    pub fn templates(&self) -> Result<PromptTemplates> {
        match &self.prompt_dir {
            Some(dir) => PromptTemplates::load(dir),
            None => Ok(PromptTemplates::builtin()),
        }
    }

    pub fn policy(&self) -> Result<RetryPolicy> {
        let on_failure = if self.degraded_on_failure {
            OnFailure::ReturnDegraded
        } else {
            OnFailure::Raise
        };
        RetryPolicy::new(self.max_attempts, on_failure)
    }

    pub fn build_pipeline_with(&self, mllm: Arc<dyn MllmBackend>) -> Result<Pipeline> {
        self.assemble(mllm, self.build_segmenter()?)
    }

    /// Pipeline over the given backends with this config's templates, retry
    /// policy and session log.
    pub fn assemble(&self, mllm: Arc<dyn MllmBackend>, segmenter: Arc<dyn SegmenterBackend>) -> Result<Pipeline> {
        let pipeline = Pipeline::new(self.templates()?, Backends::new(mllm, segmenter)).with_policy(self.policy()?);
        match &self.log_dir {
            Some(dir) => pipeline.with_log_dir(dir),
            None => Ok(pipeline),
        }
    }

    pub fn build_pipeline(&self) -> Result<Pipeline> {
        self.build_pipeline_with(self.build_mllm()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thinkfirst.toml");
        std::fs::write(
            &path,
            "mllm = \"replay\"\nfixture_dir = \"fx\"\nsegmenter = \"keyword-mock\"\nmock_rules = [\"crab=rect:0,0,4,2\"]\nport = 9000\n",
        )
        .unwrap();
        let c = CliConfig::load(&path).unwrap();
        assert_eq!(c.fixture_dir, Some(dir.path().join("fx")));
        assert_eq!(c.port, 9000);
        assert_eq!(c.rules().unwrap().len(), 1);
        // fixture directory does not exist yet
        assert!(matches!(c.build_mllm(), Err(Error::Config(_))));
        std::fs::create_dir(dir.path().join("fx")).unwrap();
        assert!(c.build_pipeline().is_ok());
    }

    #[test]
    fn invariants() {
        let c = CliConfig::default();
        assert!(c.validate().is_err(), "replay without fixtures");
        let c = CliConfig {
            mllm: MllmKind::Remote,
            segmenter: SegmenterKind::Lisa,
            ..Default::default()
        };
        assert!(c.validate().is_err(), "lisa without command");
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("c.toml");
        std::fs::write(&bad, "colour = \"red\"\n").unwrap();
        assert!(CliConfig::load(&bad).is_err());
    }
}
