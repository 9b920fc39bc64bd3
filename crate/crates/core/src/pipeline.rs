//! End-to-end flows: describe the image with a chain of thoughts, compose the
//! segmentation prompt, and hand it to the segmenter.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{request_hash, MllmBackend, MllmRequest, PromptPart, SegmenterBackend};
use crate::control::{render_annotation, ControlAnnotation};
use crate::cot::{run_cot, CotResult, RetryPolicy, TranscriptStore};
use crate::error::{Error, Result, Stage};
use crate::image_ref::ImageRef;
use crate::mask::BinaryMask;
use crate::prompt::{compose_query, PromptTemplates, TaskMode};

/// Opening sentence the model must use for the Where's Waldo prompt.
pub const WALDO_PROMPT_STEM: &str = "Please segment the boy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Chain of thoughts, summary composed with the query.
    Full,
    /// The query goes straight to the segmenter; no multimodal model call.
    BaselineNoMllm,
    /// One plain description request; the whole reply is used as the summary.
    DescribeNoCot,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [
        PipelineMode::BaselineNoMllm,
        PipelineMode::DescribeNoCot,
        PipelineMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Full => "full",
            PipelineMode::BaselineNoMllm => "baseline",
            PipelineMode::DescribeNoCot => "describe",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PipelineMode::Full),
            "baseline" | "baseline_no_mllm" => Ok(PipelineMode::BaselineNoMllm),
            "describe" | "describe_no_cot" => Ok(PipelineMode::DescribeNoCot),
            other => Err(Error::invalid(format!("unknown pipeline mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub micros: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationOutcome {
    pub mask: BinaryMask,
    pub cot: Option<CotResult>,
    /// Text placed before the query; the CoT summary or the plain description.
    pub summary: Option<String>,
    /// Exactly what the segmenter received.
    pub composed_prompt: String,
    pub mode: PipelineMode,
    pub task_mode: TaskMode,
    pub user_query: Option<String>,
    pub annotation: Option<ControlAnnotation>,
    /// Hash of the multimodal request, when one was made.
    pub request_hash: Option<String>,
    /// Digest of the outcome this one refines.
    pub previous: Option<String>,
    pub timings: Vec<StageTiming>,
}

impl SegmentationOutcome {
    /// Content digest, independent of timings and history links.
    pub fn digest(&self) -> String {
        let mut core = self.clone();
        core.timings.clear();
        core.previous = None;
        let json = serde_json::to_vec(&core).expect("outcome serializes");
        crate::prompt::sha256_hex(&json)
    }

    /// Equality ignoring timings.
    pub fn same_result(&self, other: &SegmentationOutcome) -> bool {
        let strip = |o: &SegmentationOutcome| SegmentationOutcome {
            timings: Vec::new(),
            ..o.clone()
        };
        strip(self) == strip(other)
    }
}

/// The two model backends a pipeline talks to. Calls into a segmenter that is
/// not concurrency safe go through a shared gate.
#[derive(Clone)]
pub struct Backends {
    pub mllm: Arc<dyn MllmBackend>,
    pub segmenter: Arc<dyn SegmenterBackend>,
    gate: Option<Arc<Mutex<()>>>,
}

impl Backends {
    pub fn new(mllm: Arc<dyn MllmBackend>, segmenter: Arc<dyn SegmenterBackend>) -> Self {
        let gate = (!segmenter.descriptor().concurrency_safe).then(|| Arc::new(Mutex::new(())));
        Self {
            mllm,
            segmenter,
            gate,
        }
    }

    fn segment(&self, image: &ImageRef, prompt: &str) -> Result<BinaryMask> {
        let _guard = self
            .gate
            .as_ref()
            .map(|g| g.lock().unwrap_or_else(|p| p.into_inner()));
        let mask = self.segmenter.segment_text(image, prompt)?;
        if mask.dimensions() != image.dimensions() {
            return Err(Error::backend(
                self.segmenter.descriptor().name,
                "mask dimensions differ from the image",
            ));
        }
        Ok(mask)
    }
}

/// The single request made in [`PipelineMode::DescribeNoCot`]: system context,
/// the standard task prompt and the image, without the environment prompt.
pub fn describe_request(templates: &PromptTemplates, image: &ImageRef) -> Result<MllmRequest> {
    MllmRequest::new(
        templates.system_context(),
        vec![
            PromptPart::Text(templates.task_prompt(&TaskMode::Standard)?),
            PromptPart::Image(image.clone()),
        ],
        crate::prompt::DEFAULT_TEMPERATURE,
        crate::prompt::DEFAULT_MAX_OUTPUT_TOKENS,
    )
}

/// Writes one directory per run with `outcome.json`, `transcript.txt` and `mask.png`.
#[derive(Debug)]
pub struct SessionLog {
    root: PathBuf,
    runs: Mutex<u32>,
}

#[derive(Serialize)]
struct OutcomeRecord<'a> {
    mode: PipelineMode,
    task_mode: &'a TaskMode,
    user_query: Option<&'a str>,
    annotation: Option<String>,
    summary: Option<&'a str>,
    composed_prompt: &'a str,
    cot: Option<&'a CotResult>,
    request_hash: Option<&'a str>,
    previous: Option<&'a str>,
    digest: String,
    timings: &'a [StageTiming],
    mask_file: &'a str,
}

impl SessionLog {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            runs: Mutex::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes the outcome into the next free `run-NNNN` directory.
    pub fn write(&self, outcome: &SegmentationOutcome) -> Result<PathBuf> {
        let mut runs = self.runs.lock().unwrap_or_else(|p| p.into_inner());
        let dir = loop {
            *runs += 1;
            let dir = self.root.join(format!("run-{:04}", *runs));
            if !dir.exists() {
                break dir;
            }
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let mask_path = dir.join("mask.png");
        std::fs::write(&mask_path, outcome.mask.to_png()?).map_err(|e| Error::io(&mask_path, e))?;
        if let Some(cot) = &outcome.cot {
            let path = dir.join("transcript.txt");
            std::fs::write(&path, &cot.raw_transcript).map_err(|e| Error::io(&path, e))?;
        }
        let record = OutcomeRecord {
            mode: outcome.mode,
            task_mode: &outcome.task_mode,
            user_query: outcome.user_query.as_deref(),
            annotation: outcome.annotation.as_ref().map(|a| a.to_string()),
            summary: outcome.summary.as_deref(),
            composed_prompt: &outcome.composed_prompt,
            cot: outcome.cot.as_ref(),
            request_hash: outcome.request_hash.as_deref(),
            previous: outcome.previous.as_deref(),
            digest: outcome.digest(),
            timings: &outcome.timings,
            mask_file: "mask.png",
        };
        let path = dir.join("outcome.json");
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(dir)
    }
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.0.push(StageTiming {
            stage,
            micros: start.elapsed().as_micros() as u64,
        });
        out.map_err(|e| {
            // unparseable transcripts are reported against the parser stage
            let stage = match (&e, stage) {
                (Error::TranscriptFormat { .. }, Stage::Cot) => Stage::CotParse,
                _ => stage,
            };
            e.at(stage)
        })
    }
}

pub struct Pipeline {
    templates: PromptTemplates,
    backends: Backends,
    policy: RetryPolicy,
    transcripts: Option<TranscriptStore>,
    session_log: Option<SessionLog>,
}

impl Pipeline {
    pub fn new(templates: PromptTemplates, backends: Backends) -> Self {
        Self {
            templates,
            backends,
            policy: RetryPolicy::default(),
            transcripts: None,
            session_log: None,
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Records raw transcripts under `<dir>/transcripts` and every outcome
    /// under `<dir>/run-NNNN`.
    pub fn with_log_dir(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        self.transcripts = Some(TranscriptStore::new(dir.as_ref())?);
        self.session_log = Some(SessionLog::new(dir.as_ref())?);
        Ok(self)
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn segment(
        &self,
        image: &ImageRef,
        user_query: &str,
        task_mode: &TaskMode,
        mode: PipelineMode,
    ) -> Result<SegmentationOutcome> {
        let mut timer = Timer(Vec::new());
        timer.run(Stage::Input, || {
            if user_query.trim().is_empty() {
                return Err(Error::invalid("user query is empty"));
            }
            match task_mode {
                TaskMode::Control | TaskMode::Waldo => Err(Error::invalid(format!(
                    "task mode {task_mode} produces its own prompt; use the control or waldo flow"
                ))),
                other => other.validate(),
            }
        })?;

        let (cot, summary, request_hash) = match mode {
            PipelineMode::BaselineNoMllm => (None, None, None),
            PipelineMode::Full => {
                let run = timer.run(Stage::Cot, || {
                    let bundle = self.templates.bundle(task_mode)?;
                    run_cot(
                        self.backends.mllm.as_ref(),
                        image,
                        &bundle,
                        &self.policy,
                        self.transcripts.as_ref(),
                    )
                })?;
                let summary = run.result.summary.clone();
                (Some(run.result), Some(summary), Some(run.request_hash))
            }
            PipelineMode::DescribeNoCot => {
                let (text, hash) = timer.run(Stage::Cot, || self.describe(image))?;
                (None, Some(text), Some(hash))
            }
        };

        let composed_prompt = match &summary {
            Some(s) => timer.run(Stage::Compose, || compose_query(s, user_query))?,
            None => user_query.to_string(),
        };
        let mask = timer.run(Stage::Segment, || self.backends.segment(image, &composed_prompt))?;

        self.finish(SegmentationOutcome {
            mask,
            cot,
            summary,
            composed_prompt,
            mode,
            task_mode: task_mode.clone(),
            user_query: Some(user_query.to_string()),
            annotation: None,
            request_hash,
            previous: None,
            timings: timer.0,
        })
    }

    /// Returns the trimmed description and the request hash.
    fn describe(&self, image: &ImageRef) -> Result<(String, String)> {
        let request = describe_request(&self.templates, image)?;
        let hash = request_hash(&request);
        let raw = self.backends.mllm.complete(&request)?;
        if let Some(store) = &self.transcripts {
            store.record(&hash, std::slice::from_ref(&raw))?;
        }
        let text = raw.trim().to_string();
        if text.is_empty() {
            return Err(Error::TranscriptFormat {
                reason: "description is empty".into(),
                raw,
                attempts: 1,
            });
        }
        Ok((text, hash))
    }

    /// Draws the control onto a copy of the image, lets the model write the
    /// segmentation prompt for it, and segments the original image.
    pub fn segment_with_control(
        &self,
        image: &ImageRef,
        annotation: &ControlAnnotation,
    ) -> Result<SegmentationOutcome> {
        let mut timer = Timer(Vec::new());
        let annotated = timer.run(Stage::Annotate, || render_annotation(image, annotation))?;
        let (cot, hash, prompt) = self.pseudo_prompt_flow(
            &mut timer,
            &annotated.image,
            &TaskMode::Control,
            |p| match p {
                Some(p) => Ok(p.to_string()),
                None => Err(Error::ControlProtocol(
                    "transcript has no Prompt item".into(),
                )),
            },
        )?;
        let mask = timer.run(Stage::Segment, || self.backends.segment(image, &prompt))?;
        self.finish(SegmentationOutcome {
            mask,
            summary: Some(cot.summary.clone()),
            cot: Some(cot),
            composed_prompt: prompt,
            mode: PipelineMode::Full,
            task_mode: TaskMode::Control,
            user_query: None,
            annotation: Some(annotation.clone()),
            request_hash: Some(hash),
            previous: None,
            timings: timer.0,
        })
    }

    /// Control-guided re-run linked to an earlier outcome. Nothing from
    /// `previous` affects the new mask.
    pub fn refine(
        &self,
        previous: &SegmentationOutcome,
        image: &ImageRef,
        annotation: &ControlAnnotation,
    ) -> Result<SegmentationOutcome> {
        let mut outcome = self.segment_with_control(image, annotation)?;
        outcome.previous = Some(previous.digest());
        Ok(outcome)
    }

    pub fn find_waldo(&self, image: &ImageRef) -> Result<SegmentationOutcome> {
        let mut timer = Timer(Vec::new());
        let (cot, hash, prompt) =
            self.pseudo_prompt_flow(&mut timer, image, &TaskMode::Waldo, |p| match p {
                Some(p) if p.starts_with(WALDO_PROMPT_STEM) => Ok(p.to_string()),
                Some(p) => Err(Error::WaldoProtocol(format!(
                    "prompt must start with \"{WALDO_PROMPT_STEM}\", got \"{p}\""
                ))),
                None => Err(Error::WaldoProtocol("transcript has no Prompt item".into())),
            })?;
        let mask = timer.run(Stage::Segment, || self.backends.segment(image, &prompt))?;
        self.finish(SegmentationOutcome {
            mask,
            summary: Some(cot.summary.clone()),
            cot: Some(cot),
            composed_prompt: prompt,
            mode: PipelineMode::Full,
            task_mode: TaskMode::Waldo,
            user_query: None,
            annotation: None,
            request_hash: Some(hash),
            previous: None,
            timings: timer.0,
        })
    }

    fn pseudo_prompt_flow(
        &self,
        timer: &mut Timer,
        shown: &ImageRef,
        task_mode: &TaskMode,
        accept: impl FnOnce(Option<&str>) -> Result<String>,
    ) -> Result<(CotResult, String, String)> {
        let run = timer.run(Stage::Cot, || {
            let bundle = self.templates.bundle(task_mode)?;
            run_cot(
                self.backends.mllm.as_ref(),
                shown,
                &bundle,
                &self.policy,
                self.transcripts.as_ref(),
            )
        })?;
        let prompt = timer.run(Stage::Compose, || accept(run.result.pseudo_prompt.as_deref()))?;
        Ok((run.result, run.request_hash, prompt))
    }

    fn finish(&self, outcome: SegmentationOutcome) -> Result<SegmentationOutcome> {
        if let Some(log) = &self.session_log {
            log.write(&outcome)?;
        }
        Ok(outcome)
    }
}
