//! Prompt templates and query composition.
//!
//! Every instruction sent to the multimodal model, and every canned user
//! query, lives in a text file under `prompts/`. The directory carries a
//! `checksums.txt` (`<sha256> <filename>` per line) that is verified on load,
//! so an edited template is caught before it reaches a model.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2000;

const PLACEHOLDER_OBJECT: &str = "<object>";

/// Files every template directory must provide.
pub const TEMPLATE_FILES: &[&str] = &[
    "system_context.txt",
    "env_standard.txt",
    "env_waldo.txt",
    "task_standard.txt",
    "task_camouflage.txt",
    "task_explicit_object.txt",
    "task_control.txt",
    "task_waldo.txt",
    "query_implicit.txt",
    "query_explicit.txt",
    "query_waldo_baseline.txt",
];

macro_rules! builtin_files {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../prompts/", $name)))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin_files!(
    "system_context.txt",
    "env_standard.txt",
    "env_waldo.txt",
    "task_standard.txt",
    "task_camouflage.txt",
    "task_explicit_object.txt",
    "task_control.txt",
    "task_waldo.txt",
    "query_implicit.txt",
    "query_explicit.txt",
    "query_waldo_baseline.txt",
);
const BUILTIN_CHECKSUMS: &str = include_str!("../prompts/checksums.txt");

/// What the multimodal model is asked to do with the image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum TaskMode {
    Standard,
    Camouflage,
    ExplicitObject { object_class: String },
    Control,
    Waldo,
}

impl TaskMode {
    pub fn explicit(object_class: impl Into<String>) -> Self {
        TaskMode::ExplicitObject {
            object_class: object_class.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskMode::ExplicitObject { object_class } if object_class.trim().is_empty() => {
                Err(Error::invalid("explicit_object task mode needs an object class"))
            }
            _ => Ok(()),
        }
    }

    fn env_template(&self) -> &'static str {
        match self {
            TaskMode::Waldo => "env_waldo.txt",
            _ => "env_standard.txt",
        }
    }

    fn task_template(&self) -> &'static str {
        match self {
            TaskMode::Standard => "task_standard.txt",
            TaskMode::Camouflage => "task_camouflage.txt",
            TaskMode::ExplicitObject { .. } => "task_explicit_object.txt",
            TaskMode::Control => "task_control.txt",
            TaskMode::Waldo => "task_waldo.txt",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskMode::Standard => f.write_str("standard"),
            TaskMode::Camouflage => f.write_str("camouflage"),
            TaskMode::ExplicitObject { object_class } => write!(f, "explicit:{object_class}"),
            TaskMode::Control => f.write_str("control"),
            TaskMode::Waldo => f.write_str("waldo"),
        }
    }
}

/// Accepts `standard`, `camouflage`, `control`, `waldo` and `explicit:<class>`.
impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "standard" => TaskMode::Standard,
            "camouflage" => TaskMode::Camouflage,
            "control" => TaskMode::Control,
            "waldo" => TaskMode::Waldo,
            other => match other
                .strip_prefix("explicit:")
                .or_else(|| other.strip_prefix("explicit_object:"))
            {
                Some(class) => TaskMode::explicit(class),
                None => return Err(Error::invalid(format!("unknown task mode '{other}'"))),
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// The two query forms used for camouflaged-object evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserQueryKind {
    Implicit,
    Explicit { object_class: String },
}

/// Everything sent to the multimodal model besides the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_context: String,
    pub environment_prompt: String,
    pub task_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl PromptBundle {
    pub fn validate(&self) -> Result<()> {
        if self.environment_prompt.trim().is_empty() {
            return Err(Error::invalid("environment prompt is empty"));
        }
        if self.task_prompt.trim().is_empty() {
            return Err(Error::invalid("task prompt is empty"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::invalid("max_output_tokens must be positive"));
        }
        Ok(())
    }

    pub fn with_sampling(mut self, temperature: f64, max_output_tokens: u32) -> Result<Self> {
        self.temperature = temperature;
        self.max_output_tokens = max_output_tokens;
        self.validate()?;
        Ok(self)
    }
}

/// A verified set of prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    files: BTreeMap<String, String>,
}

impl PromptTemplates {
    /// The templates compiled into the crate from its `prompts/` directory.
    pub fn builtin() -> Self {
        Self::from_sources(
            BUILTIN.iter().map(|(n, c)| (n.to_string(), c.to_string())),
            BUILTIN_CHECKSUMS,
        )
        .expect("built-in prompt templates match their checksums")
    }

    /// Loads and verifies a template directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let checksum_path = dir.join("checksums.txt");
        let checksums = std::fs::read_to_string(&checksum_path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", checksum_path.display()))
        })?;
        let mut files = Vec::new();
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            let content = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("template {} missing: {e}", path.display())))?;
            files.push((name.to_string(), content));
        }
        Self::from_sources(files, &checksums)
    }

    fn from_sources(
        files: impl IntoIterator<Item = (String, String)>,
        checksums: &str,
    ) -> Result<Self> {
        let files: BTreeMap<String, String> = files.into_iter().collect();
        let recorded = parse_checksums(checksums)?;
        for name in TEMPLATE_FILES {
            let content = files
                .get(*name)
                .ok_or_else(|| Error::Config(format!("template {name} missing")))?;
            let expected = recorded
                .get(*name)
                .ok_or_else(|| Error::Config(format!("no recorded checksum for {name}")))?;
            let actual = sha256_hex(content.as_bytes());
            if &actual != expected {
                return Err(Error::Config(format!(
                    "checksum mismatch for {name}: recorded {expected}, found {actual}"
                )));
            }
        }
        Ok(Self { files })
    }

    fn get(&self, name: &str) -> &str {
        // presence is checked in from_sources
        &self.files[name]
    }

    pub fn system_context(&self) -> &str {
        self.get("system_context.txt")
    }

    pub fn environment_prompt(&self, mode: &TaskMode) -> Result<String> {
        mode.validate()?;
        Ok(self.get(mode.env_template()).to_string())
    }

    pub fn task_prompt(&self, mode: &TaskMode) -> Result<String> {
        mode.validate()?;
        let template = self.get(mode.task_template());
        Ok(match mode {
            TaskMode::ExplicitObject { object_class } => {
                template.replacen(PLACEHOLDER_OBJECT, object_class, 1)
            }
            _ => template.to_string(),
        })
    }

    /// Prompt bundle with the default sampling parameters.
    pub fn bundle(&self, mode: &TaskMode) -> Result<PromptBundle> {
        let bundle = PromptBundle {
            system_context: self.system_context().to_string(),
            environment_prompt: self.environment_prompt(mode)?,
            task_prompt: self.task_prompt(mode)?,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn user_query(&self, kind: &UserQueryKind) -> Result<String> {
        match kind {
            UserQueryKind::Implicit => Ok(self.get("query_implicit.txt").to_string()),
            UserQueryKind::Explicit { object_class } => {
                if object_class.trim().is_empty() {
                    return Err(Error::invalid("explicit query needs an object class"));
                }
                Ok(self
                    .get("query_explicit.txt")
                    .replacen(PLACEHOLDER_OBJECT, object_class, 1))
            }
        }
    }

    /// Query used for the plain segmenter on Where's Waldo scenes.
    pub fn waldo_baseline_query(&self) -> &str {
        self.get("query_waldo_baseline.txt")
    }
}

/// Joins the model's summary and the user query with a single space.
pub fn compose_query(summary: &str, user_query: &str) -> Result<String> {
    if summary.is_empty() {
        return Err(Error::invalid("summary is empty"));
    }
    if user_query.is_empty() {
        return Err(Error::invalid("user query is empty"));
    }
    let mut out = String::with_capacity(summary.len() + 1 + user_query.len());
    out.push_str(summary);
    out.push(' ');
    out.push_str(user_query);
    Ok(out)
}

fn parse_checksums(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        match (fields.next(), fields.next(), fields.next()) {
            (Some(hash), Some(name), None)
                if hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit()) =>
            {
                out.insert(name.to_string(), hash.to_ascii_lowercase());
            }
            _ => {
                return Err(Error::Config(format!(
                    "checksums.txt line {}: expected '<sha256> <filename>'",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
