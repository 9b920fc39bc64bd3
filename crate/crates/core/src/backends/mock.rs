use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{BackendDescriptor, BackendKind, MllmBackend, MllmRequest, SegmenterBackend};
use crate::error::{Error, Result};
use crate::image_ref::ImageRef;
use crate::mask::BinaryMask;

/// MLLM stand-in that returns scripted responses in order (the last one
/// repeats) and counts calls.
pub struct ScriptedMllm {
    responses: Vec<String>,
    calls: AtomicUsize,
    requests: Mutex<Vec<MllmRequest>>,
}

impl ScriptedMllm {
    pub fn constant(text: impl Into<String>) -> Self {
        Self::sequence(vec![text.into()])
    }

    pub fn sequence(responses: Vec<String>) -> Self {
        assert!(!responses.is_empty(), "scripted backend needs a response");
        Self {
            responses,
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<MllmRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl MllmBackend for ScriptedMllm {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        Ok(self.responses[n.min(self.responses.len() - 1)].clone())
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new("scripted", BackendKind::Mllm, true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSpec {
    /// Returned as-is; must match the queried image's dimensions.
    Fixed(BinaryMask),
    /// Half-open pixel rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    Rect { x0: u32, y0: u32, x1: u32, y1: u32 },
}

impl MaskSpec {
    fn render(&self, width: u32, height: u32) -> Result<BinaryMask> {
        match self {
            MaskSpec::Fixed(mask) if mask.dimensions() == (width, height) => Ok(mask.clone()),
            MaskSpec::Fixed(mask) => Err(Error::backend(
                "keyword-mock",
                format!(
                    "configured {}x{} mask does not fit a {width}x{height} image",
                    mask.width(),
                    mask.height()
                ),
            )),
            MaskSpec::Rect { x0, y0, x1, y1 } => Ok(BinaryMask::from_fn(width, height, |x, y| {
                (*x0..*x1).contains(&x) && (*y0..*y1).contains(&y)
            })),
        }
    }
}

/// `rect:x0,y0,x1,y1` (half-open) or `empty`.
impl std::str::FromStr for MaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "empty" {
            return Ok(MaskSpec::Rect { x0: 0, y0: 0, x1: 0, y1: 0 });
        }
        let nums = s
            .strip_prefix("rect:")
            .ok_or_else(|| Error::invalid(format!("mask spec '{s}' must be rect:x0,y0,x1,y1 or empty")))?
            .split(',')
            .map(|n| n.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("mask spec '{s}': {e}")))?;
        match nums[..] {
            [x0, y0, x1, y1] => Ok(MaskSpec::Rect { x0, y0, x1, y1 }),
            _ => Err(Error::invalid(format!("mask spec '{s}' needs four coordinates"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KeywordRule {
    pub triggers: Vec<String>,
    pub mask: MaskSpec,
}

impl KeywordRule {
    pub fn new<S: Into<String>>(triggers: impl IntoIterator<Item = S>, mask: MaskSpec) -> Self {
        Self {
            triggers: triggers.into_iter().map(Into::into).collect(),
            mask,
        }
    }

    fn hits(&self, prompt_lower: &str) -> usize {
        self.triggers
            .iter()
            .filter(|t| !t.is_empty() && prompt_lower.contains(&t.to_lowercase()))
            .count()
    }
}

/// `trigger[,trigger...]=<mask spec>`, e.g. `boy,striped=rect:44,8,50,20`.
impl std::str::FromStr for KeywordRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (triggers, mask) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("rule '{s}' must look like words=rect:x0,y0,x1,y1")))?;
        let triggers: Vec<String> = triggers
            .split(',')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if triggers.is_empty() {
            return Err(Error::invalid(format!("rule '{s}' has no trigger words")));
        }
        Ok(Self::new(triggers, mask.parse()?))
    }
}

impl std::fmt::Display for KeywordRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}=", self.triggers.join(","))?;
        match &self.mask {
            MaskSpec::Rect { x0, y0, x1, y1 } => write!(f, "rect:{x0},{y0},{x1},{y1}"),
            MaskSpec::Fixed(m) => write!(f, "fixed:{}x{}", m.width(), m.height()),
        }
    }
}

/// A segmentation call as seen by the mock.
#[derive(Debug, Clone)]
pub struct SegmentCall {
    pub image: ImageRef,
    pub prompt: String,
}

/// Segmenter stand-in: picks the rule with the most trigger words contained in
/// the prompt (case-insensitive; ties go to the earliest rule). No hit yields
/// an all-false mask.
pub struct KeywordMockSegmenter {
    rules: Vec<KeywordRule>,
    calls: Mutex<Vec<SegmentCall>>,
}

impl KeywordMockSegmenter {
    pub fn new(rules: Vec<KeywordRule>) -> Self {
        Self {
            rules,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    pub fn calls(&self) -> Vec<SegmentCall> {
        self.calls.lock().unwrap().clone()
    }

    fn best_rule(&self, prompt: &str) -> Option<&KeywordRule> {
        let lower = prompt.to_lowercase();
        let mut best: Option<(&KeywordRule, usize)> = None;
        for rule in &self.rules {
            let hits = rule.hits(&lower);
            if hits > 0 && best.is_none_or(|(_, b)| hits > b) {
                best = Some((rule, hits));
            }
        }
        best.map(|(r, _)| r)
    }
}

impl SegmenterBackend for KeywordMockSegmenter {
    fn segment_text(&self, image: &ImageRef, prompt: &str) -> Result<BinaryMask> {
        if prompt.trim().is_empty() {
            return Err(Error::invalid("segmentation prompt is empty"));
        }
        self.calls.lock().unwrap().push(SegmentCall {
            image: image.clone(),
            prompt: prompt.to_string(),
        });
        let (w, h) = image.dimensions();
        match self.best_rule(prompt) {
            Some(rule) => rule.mask.render(w, h),
            None => Ok(BinaryMask::empty(w, h)),
        }
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new("keyword-mock", BackendKind::Segmenter, true)
            .with("rules", self.rules.len())
    }
}
