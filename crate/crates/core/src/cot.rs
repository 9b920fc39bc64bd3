//! Chain-of-thought transcripts: requesting one from the multimodal model,
//! parsing it, and rendering it back.
//!
//! The chain is produced in a single completion. The transcript grammar accepts
//! the dashed style the environment prompt asks for,
//!
//! ```text
//! - What is shown?: A cat.
//! - Summary: A cat on grass.
//! - Prompt: Please segment the cat in the image.
//! ```
//!
//! as well as labelled items (`Q1:` / `A1:` / `Summary:` / `Prompt:`), optionally
//! in bold (`**Q1:**`). Lines that directly follow an item are folded into it;
//! other lines are skipped.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{request_hash, MllmBackend, MllmRequest, PromptPart};
use crate::error::{Error, Result};
use crate::image_ref::ImageRef;
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    /// 1-based position in the chain.
    pub index: u32,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotResult {
    pub pairs: Vec<QaPair>,
    pub summary: String,
    pub pseudo_prompt: Option<String>,
    pub raw_transcript: String,
    /// Set when the transcript could not be parsed and the whole response was
    /// kept as the summary (see [`OnFailure::ReturnDegraded`]). `pairs` is empty then.
    #[serde(default)]
    pub degraded: bool,
}

impl CotResult {
    /// Compares the parsed content, ignoring the raw transcript.
    pub fn same_content(&self, other: &CotResult) -> bool {
        self.pairs == other.pairs
            && self.summary == other.summary
            && self.pseudo_prompt == other.pseudo_prompt
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.pairs.is_empty() && !self.degraded {
            return bad("chain of thoughts has no question/answer pairs".into());
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            if pair.index as usize != i + 1 {
                return bad(format!("pair {} carries index {}", i + 1, pair.index));
            }
            check_field(&pair.question, "question")?;
            check_field(&pair.answer, "answer")?;
        }
        check_field(&self.summary, "summary")?;
        if let Some(p) = &self.pseudo_prompt {
            check_field(p, "prompt")?;
        }
        Ok(())
    }

    fn degraded(raw: &str) -> Option<Self> {
        let summary = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        (!summary.is_empty()).then(|| Self {
            pairs: Vec::new(),
            summary,
            pseudo_prompt: None,
            raw_transcript: raw.to_string(),
            degraded: true,
        })
    }
}

fn check_field(text: &str, what: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if text.trim() != text {
        return Err(Error::invalid(format!("{what} has surrounding whitespace")));
    }
    if text.contains(['\n', '\r']) {
        return Err(Error::invalid(format!("{what} spans several lines")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnFailure {
    #[default]
    Raise,
    ReturnDegraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub on_failure: OnFailure,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 2,
            on_failure: OnFailure::Raise,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, on_failure: OnFailure) -> Result<Self> {
        if max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        Ok(Self {
            max_attempts,
            on_failure,
        })
    }
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Question(u32),
    Answer(u32),
    Summary,
    Prompt,
}

#[derive(Debug, PartialEq, Eq)]
enum Line<'a> {
    Blank,
    Labelled(Label, &'a str),
    Pair(&'a str, &'a str),
    Text(&'a str),
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^(?:-\s+)?(?:\*\*(?P<bold>[QA]\d+|summary|prompt)(?::\*\*|\*\*\s*:)|(?P<plain>[QA]\d+|summary|prompt)\s*:)\s*(?P<rest>.*)$",
        )
        .expect("valid regex")
    })
}

fn parse_label(name: &str) -> Option<Label> {
    let lower = name.to_ascii_lowercase();
    match lower.as_str() {
        "summary" => Some(Label::Summary),
        "prompt" => Some(Label::Prompt),
        _ => {
            let n = lower[1..].parse().ok()?;
            match lower.as_bytes()[0] {
                b'q' => Some(Label::Question(n)),
                b'a' => Some(Label::Answer(n)),
                _ => None,
            }
        }
    }
}

fn strip_bold(s: &str) -> &str {
    s.strip_prefix("**")
        .and_then(|s| s.strip_suffix("**"))
        .map(str::trim)
        .unwrap_or(s)
}

fn classify(line: &str) -> Line<'_> {
    let line = line.trim();
    if line.is_empty() {
        return Line::Blank;
    }
    if let Some(caps) = label_regex().captures(line) {
        let name = caps.name("bold").or_else(|| caps.name("plain")).unwrap();
        if let Some(label) = parse_label(name.as_str()) {
            return Line::Labelled(label, caps.name("rest").unwrap().as_str().trim());
        }
    }
    if let Some(item) = line.strip_prefix("- ") {
        if let Some((q, a)) = item.split_once(": ") {
            let q = strip_bold(q.trim());
            if !q.is_empty() {
                return Line::Pair(q, a.trim());
            }
        }
    }
    Line::Text(line)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Open {
    Nothing,
    Question,
    Answer,
    Summary,
    Prompt,
}

fn format_error(reason: impl Into<String>, raw: &str) -> Error {
    Error::TranscriptFormat {
        reason: reason.into(),
        raw: raw.to_string(),
        attempts: 1,
    }
}

fn fold(target: &mut String, text: &str) {
    if !target.is_empty() {
        target.push(' ');
    }
    target.push_str(text);
}

/// Parses a chain-of-thought transcript. Never panics; malformed input yields
/// [`Error::TranscriptFormat`].
pub fn parse_transcript(text: &str) -> Result<CotResult> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut pending: Option<(u32, String)> = None;
    let mut summary: Option<String> = None;
    let mut prompt: Option<String> = None;
    let mut open = Open::Nothing;
    let mut after_blank = false;

    for raw_line in text.lines() {
        let line = classify(raw_line);
        if line == Line::Blank {
            after_blank = true;
            continue;
        }
        let follows_blank = std::mem::replace(&mut after_blank, false);

        match line {
            Line::Blank => unreachable!(),
            Line::Text(t) => {
                let target = match open {
                    Open::Nothing => None,
                    Open::Question => pending.as_mut().map(|p| &mut p.1),
                    Open::Answer => pairs.last_mut().map(|p| &mut p.1),
                    Open::Summary => summary.as_mut(),
                    Open::Prompt => prompt.as_mut(),
                };
                match target {
                    // an item left empty on its own line picks up the next text line
                    Some(s) if !follows_blank || s.is_empty() => fold(s, t),
                    _ => open = Open::Nothing,
                }
            }
            Line::Labelled(Label::Summary, rest) => {
                if let Some((k, _)) = &pending {
                    return Err(format_error(format!("question {k} has no answer"), text));
                }
                if summary.is_some() {
                    return Err(format_error("more than one Summary item", text));
                }
                summary = Some(rest.to_string());
                open = Open::Summary;
            }
            Line::Labelled(Label::Prompt, rest) => {
                if summary.is_none() {
                    return Err(format_error("Prompt item before Summary", text));
                }
                if prompt.is_some() {
                    return Err(format_error("more than one Prompt item", text));
                }
                prompt = Some(rest.to_string());
                open = Open::Prompt;
            }
            // pair collection ends at the summary
            _ if summary.is_some() => open = Open::Nothing,
            Line::Labelled(Label::Question(k), rest) => {
                if let Some((j, _)) = &pending {
                    return Err(format_error(format!("question {j} has no answer"), text));
                }
                pending = Some((k, rest.to_string()));
                open = Open::Question;
            }
            Line::Labelled(Label::Answer(k), rest) => match pending.take() {
                Some((j, question)) if j == k => {
                    pairs.push((question, rest.to_string()));
                    open = Open::Answer;
                }
                Some((j, _)) => {
                    return Err(format_error(
                        format!("answer {k} follows question {j}"),
                        text,
                    ))
                }
                None => return Err(format_error(format!("answer {k} without a question"), text)),
            },
            Line::Pair(q, a) => {
                if let Some((j, _)) = &pending {
                    return Err(format_error(format!("question {j} has no answer"), text));
                }
                pairs.push((q.to_string(), a.to_string()));
                open = Open::Answer;
            }
        }
    }

    if let Some((k, _)) = pending {
        return Err(format_error(format!("question {k} has no answer"), text));
    }
    let summary = summary.ok_or_else(|| format_error("no Summary item", text))?;
    if pairs.is_empty() {
        return Err(format_error("no question/answer pairs", text));
    }
    let result = CotResult {
        pairs: pairs
            .into_iter()
            .enumerate()
            .map(|(i, (question, answer))| QaPair {
                index: i as u32 + 1,
                question,
                answer,
            })
            .collect(),
        summary,
        pseudo_prompt: prompt,
        raw_transcript: text.to_string(),
        degraded: false,
    };
    result.validate().map_err(|e| match e {
        Error::InvalidArgument(msg) => format_error(msg, text),
        other => other,
    })?;
    Ok(result)
}

/// Renders a canonical transcript that [`parse_transcript`] maps back to the
/// same pairs, summary and prompt.
///
/// The dashed `- Question: Answer` style is used unless some question would
/// not survive it (e.g. it contains `": "`), in which case the labelled
/// `Qk:`/`Ak:` style is used for all pairs.
pub fn render_transcript(result: &CotResult) -> String {
    let dashed_ok = result
        .pairs
        .iter()
        .all(|p| classify(&format!("- {}: {}", p.question, p.answer)) == Line::Pair(&p.question, &p.answer));
    let mut lines = Vec::with_capacity(result.pairs.len() * 2 + 2);
    for pair in &result.pairs {
        if dashed_ok {
            lines.push(format!("- {}: {}", pair.question, pair.answer));
        } else {
            lines.push(format!("Q{}: {}", pair.index, pair.question));
            lines.push(format!("A{}: {}", pair.index, pair.answer));
        }
    }
    lines.push(format!("- Summary: {}", result.summary));
    if let Some(p) = &result.pseudo_prompt {
        lines.push(format!("- Prompt: {p}"));
    }
    lines.join("\n")
}

// ---------------------------------------------------------------------------
// orchestration

/// The request carrying the system context, environment prompt, task prompt and image.
pub fn build_cot_request(image: &ImageRef, bundle: &PromptBundle) -> Result<MllmRequest> {
    bundle.validate()?;
    MllmRequest::new(
        bundle.system_context.clone(),
        vec![
            PromptPart::Text(bundle.environment_prompt.clone()),
            PromptPart::Text(bundle.task_prompt.clone()),
            PromptPart::Image(image.clone()),
        ],
        bundle.temperature,
        bundle.max_output_tokens,
    )
}

#[derive(Debug, Clone)]
pub struct CotRun {
    pub result: CotResult,
    pub request_hash: String,
    /// Raw model output of every attempt, in order.
    pub attempts: Vec<String>,
}

/// Persists raw transcripts as `<root>/transcripts/<request_hash>.txt`.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

impl TranscriptStore {
    pub fn new(root: impl AsRef<Path>) -> Result<Self> {
        let dir = root.as_ref().join("transcripts");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.txt"))
    }

    /// The latest attempt goes to `<hash>.txt`; when a request needed retries,
    /// every attempt is also kept as `<hash>.attempt-<k>.txt`.
    pub(crate) fn record(&self, hash: &str, attempts: &[String]) -> Result<()> {
        let Some(latest) = attempts.last() else {
            return Ok(());
        };
        let path = self.path_for(hash);
        std::fs::write(&path, latest).map_err(|e| Error::io(&path, e))?;
        if attempts.len() > 1 {
            for (k, raw) in attempts.iter().enumerate() {
                let path = self.dir.join(format!("{hash}.attempt-{}.txt", k + 1));
                std::fs::write(&path, raw).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Requests a chain of thoughts and parses it, retrying unparseable output up
/// to `policy.max_attempts` total attempts. Backend failures are returned
/// immediately.
pub fn run_cot(
    backend: &dyn MllmBackend,
    image: &ImageRef,
    bundle: &PromptBundle,
    policy: &RetryPolicy,
    store: Option<&TranscriptStore>,
) -> Result<CotRun> {
    let request = build_cot_request(image, bundle)?;
    let hash = request_hash(&request);
    let max_attempts = policy.max_attempts.max(1);
    let mut attempts = Vec::new();
    let mut last_reason = String::new();

    for attempt in 1..=max_attempts {
        let raw = backend.complete(&request)?;
        attempts.push(raw.clone());
        if let Some(store) = store {
            store.record(&hash, &attempts)?;
        }
        match parse_transcript(&raw) {
            Ok(result) => {
                return Ok(CotRun {
                    result,
                    request_hash: hash,
                    attempts,
                })
            }
            Err(Error::TranscriptFormat { reason, .. }) => {
                log::warn!("transcript attempt {attempt}/{max_attempts} rejected: {reason}");
                last_reason = reason;
            }
            Err(other) => return Err(other),
        }
    }

    let last = attempts.last().cloned().unwrap_or_default();
    if policy.on_failure == OnFailure::ReturnDegraded {
        if let Some(result) = CotResult::degraded(&last) {
            return Ok(CotRun {
                result,
                request_hash: hash,
                attempts,
            });
        }
    }
    Err(Error::TranscriptFormat {
        reason: last_reason,
        raw: last,
        attempts: max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedMllm;
    use crate::prompt::{PromptTemplates, TaskMode};
    use image::{DynamicImage, RgbImage};
    use proptest::prelude::*;

    fn pair(index: u32, q: &str, a: &str) -> QaPair {
        QaPair {
            index,
            question: q.into(),
            answer: a.into(),
        }
    }

    #[test]
    fn minimal_transcript() {
        let r = parse_transcript("- What is shown?: A cat.\n- Summary: A cat on grass.").unwrap();
        assert_eq!(r.pairs, vec![pair(1, "What is shown?", "A cat.")]);
        assert_eq!(r.summary, "A cat on grass.");
        assert_eq!(r.pseudo_prompt, None);
    }

    #[test]
    fn summary_only_is_rejected() {
        assert!(matches!(
            parse_transcript("- Summary: only summary."),
            Err(Error::TranscriptFormat { .. })
        ));
    }

    #[test]
    fn missing_summary_is_rejected() {
        assert!(parse_transcript("- Q?: A.").is_err());
        assert!(parse_transcript("").is_err());
        assert!(parse_transcript("garbage").is_err());
    }

    #[test]
    fn prompt_before_summary_is_rejected() {
        let err = parse_transcript("- Q?: A.\n- Prompt: Please segment it.\n- Summary: S.").unwrap_err();
        assert!(err.to_string().contains("Prompt item before Summary"), "{err}");
    }

    #[test]
    fn first_colon_splits_question_from_answer() {
        let r = parse_transcript("- Time: of day?: Noon: bright.\n- Summary: S.").unwrap();
        assert_eq!(r.pairs[0].question, "Time");
        assert_eq!(r.pairs[0].answer, "of day?: Noon: bright.");
    }

    #[test]
    fn bold_and_plain_labels() {
        let text = "Sure! Here is the description.\n\n**Q1:** What is it?\n\n**A1:** A crab.\n\nQ2: Where?\nA2: On sand.\n\n**Summary:** A crab on sand.\n\n**Prompt:** Please segment the crab in the image.\n\nHope this helps!";
        let r = parse_transcript(text).unwrap();
        assert_eq!(
            r.pairs,
            vec![pair(1, "What is it?", "A crab."), pair(2, "Where?", "On sand.")]
        );
        assert_eq!(r.summary, "A crab on sand.");
        assert_eq!(
            r.pseudo_prompt.as_deref(),
            Some("Please segment the crab in the image.")
        );
    }

    #[test]
    fn continuation_lines_fold_into_the_open_item() {
        let text = "- What is there?: A long\n  answer over\n  three lines.\n- Summary: Short\nsummary.\n\nunrelated trailing prose";
        let r = parse_transcript(text).unwrap();
        assert_eq!(r.pairs[0].answer, "A long answer over three lines.");
        assert_eq!(r.summary, "Short summary.");
    }

    #[test]
    fn label_on_its_own_line() {
        let r = parse_transcript("- Q?: A.\nSummary:\n\nThe actual summary.").unwrap();
        assert_eq!(r.summary, "The actual summary.");
    }

    #[test]
    fn unanswered_or_mismatched_questions() {
        assert!(parse_transcript("Q1: a?\nQ2: b?\nA2: x\nSummary: s").is_err());
        assert!(parse_transcript("Q1: a?\nA2: x\nSummary: s").is_err());
        assert!(parse_transcript("A1: x\nSummary: s").is_err());
        assert!(parse_transcript("Q1: a?\nSummary: s").is_err());
    }

    #[test]
    fn duplicate_summary_or_prompt() {
        assert!(parse_transcript("- q: a\n- Summary: s\n- Summary: t").is_err());
        assert!(parse_transcript("- q: a\n- Summary: s\n- Prompt: p\n- Prompt: r").is_err());
    }

    #[test]
    fn items_after_summary_are_ignored() {
        let r = parse_transcript("- q: a\n- Summary: s\n- extra: ignored\n- Prompt: p").unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.summary, "s");
        assert_eq!(r.pseudo_prompt.as_deref(), Some("p"));
    }

    #[test]
    fn render_examples() {
        let r = CotResult {
            pairs: vec![pair(1, "A?", "B.")],
            summary: "S.".into(),
            pseudo_prompt: None,
            raw_transcript: String::new(),
            degraded: false,
        };
        assert_eq!(render_transcript(&r), "- A?: B.\n- Summary: S.");
        let with_prompt = CotResult {
            pseudo_prompt: Some("Please segment the cat.".into()),
            ..r
        };
        assert!(render_transcript(&with_prompt).ends_with("\n- Prompt: Please segment the cat."));
    }

    #[test]
    fn render_falls_back_to_labels_for_colon_questions() {
        let r = CotResult {
            pairs: vec![pair(1, "Ratio: width to height?", "2: 1."), pair(2, "Summary", "x")],
            summary: "S.".into(),
            pseudo_prompt: None,
            raw_transcript: String::new(),
            degraded: false,
        };
        let text = render_transcript(&r);
        assert!(text.starts_with("Q1: Ratio: width to height?\nA1: 2: 1."));
        assert!(parse_transcript(&text).unwrap().same_content(&r));
    }

    fn image() -> ImageRef {
        ImageRef::from_dynamic(&DynamicImage::ImageRgb8(RgbImage::new(4, 4))).unwrap()
    }

    #[test]
    fn run_cot_single_call_on_success() {
        let backend = ScriptedMllm::constant("- Q?: A.\n- Summary: S.");
        let bundle = PromptTemplates::builtin().bundle(&TaskMode::Standard).unwrap();
        let run = run_cot(&backend, &image(), &bundle, &RetryPolicy::default(), None).unwrap();
        assert_eq!(backend.calls(), 1);
        assert_eq!(run.result.summary, "S.");
        let req = &backend.requests()[0];
        assert_eq!(req.system_context(), bundle.system_context);
        let texts: Vec<_> = req.texts().collect();
        assert_eq!(texts, [bundle.environment_prompt.as_str(), bundle.task_prompt.as_str()]);
        assert_eq!(req.temperature(), 0.5);
        assert_eq!(req.max_output_tokens(), 2000);
    }

    #[test]
    fn run_cot_retries_until_parse() {
        let backend = ScriptedMllm::sequence(vec!["garbage".into(), "- Q?: A.\n- Summary: S.".into()]);
        let bundle = PromptTemplates::builtin().bundle(&TaskMode::Standard).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(dir.path()).unwrap();
        let run = run_cot(&backend, &image(), &bundle, &RetryPolicy::default(), Some(&store)).unwrap();
        assert_eq!(backend.calls(), 2);
        assert_eq!(run.attempts, ["garbage", "- Q?: A.\n- Summary: S."]);
        let latest = std::fs::read_to_string(store.path_for(&run.request_hash)).unwrap();
        assert_eq!(latest, "- Q?: A.\n- Summary: S.");
        let first = dir
            .path()
            .join("transcripts")
            .join(format!("{}.attempt-1.txt", run.request_hash));
        assert_eq!(std::fs::read_to_string(first).unwrap(), "garbage");
    }

    #[test]
    fn run_cot_gives_up_after_max_attempts() {
        let backend = ScriptedMllm::constant("garbage");
        let bundle = PromptTemplates::builtin().bundle(&TaskMode::Standard).unwrap();
        let policy = RetryPolicy::new(2, OnFailure::Raise).unwrap();
        match run_cot(&backend, &image(), &bundle, &policy, None) {
            Err(Error::TranscriptFormat { raw, attempts, .. }) => {
                assert_eq!(raw, "garbage");
                assert_eq!(attempts, 2);
            }
            other => panic!("expected format error, got {other:?}"),
        }
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn run_cot_degraded_keeps_raw_text() {
        let backend = ScriptedMllm::constant("A plain\ndescription.");
        let bundle = PromptTemplates::builtin().bundle(&TaskMode::Standard).unwrap();
        let policy = RetryPolicy::new(1, OnFailure::ReturnDegraded).unwrap();
        let run = run_cot(&backend, &image(), &bundle, &policy, None).unwrap();
        assert!(run.result.degraded);
        assert!(run.result.pairs.is_empty());
        assert_eq!(run.result.summary, "A plain description.");
        assert!(RetryPolicy::new(0, OnFailure::Raise).is_err());
    }

    fn field() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 ,.?:*!'()-]{1,30}".prop_filter_map("trimmed non-empty", |s| {
            let t = s.trim().to_string();
            (!t.is_empty()).then_some(t)
        })
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(
            qa in proptest::collection::vec((field(), field()), 1..6),
            summary in field(),
            prompt in proptest::option::of(field()),
        ) {
            let r = CotResult {
                pairs: qa.into_iter().enumerate().map(|(i, (q, a))| pair(i as u32 + 1, &q, &a)).collect(),
                summary,
                pseudo_prompt: prompt,
                raw_transcript: String::new(),
                degraded: false,
            };
            let parsed = parse_transcript(&render_transcript(&r)).unwrap();
            prop_assert!(parsed.same_content(&r), "{:?} vs {:?}", parsed, r);
        }

        #[test]
        fn parser_is_total(text in "(?s).{0,400}") {
            match parse_transcript(&text) {
                Ok(r) => prop_assert!(r.validate().is_ok()),
                Err(Error::TranscriptFormat { .. }) => {}
                Err(other) => prop_assert!(false, "unexpected error kind {other:?}"),
            }
        }

        #[test]
        fn parser_is_total_on_item_soup(
            lines in proptest::collection::vec(
                prop_oneof![
                    Just("- Summary: s".to_string()),
                    Just("- Prompt: p".to_string()),
                    Just("**Q1:** q".to_string()),
                    Just("**A1:** a".to_string()),
                    Just("Q2: q".to_string()),
                    Just("A2: a".to_string()),
                    Just("- q: a".to_string()),
                    Just(String::new()),
                    "[a-z :*-]{0,12}",
                ],
                0..12,
            )
        ) {
            let text = lines.join("\n");
            match parse_transcript(&text) {
                Ok(r) => prop_assert!(r.validate().is_ok()),
                Err(Error::TranscriptFormat { .. }) => {}
                Err(other) => prop_assert!(false, "unexpected error kind {other:?}"),
            }
        }
    }
}
