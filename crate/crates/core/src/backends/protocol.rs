//! Line protocol between the orchestrator and an external segmentation agent.
//!
//! ```text
//! -> SEGMENT <image_path> <base64(prompt utf-8)>\n
//! <- MASK <mask_path>\n      or      ERROR <message>\n
//! ```
//!
//! The mask file is a single-channel 8-bit image; nonzero pixels are foreground.
//! The image path may contain spaces; the prompt field never does.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use base64::Engine;

use super::SegmenterBackend;
use crate::error::{Error, Result};
use crate::image_ref::ImageRef;

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRequest {
    pub image_path: PathBuf,
    pub prompt: String,
}

impl SegmentRequest {
    pub fn to_line(&self) -> Result<String> {
        let path = self.image_path.to_str().ok_or_else(|| {
            Error::invalid(format!("image path {} is not UTF-8", self.image_path.display()))
        })?;
        if path.contains(['\n', '\r']) || path.is_empty() {
            return Err(Error::invalid("image path cannot be sent over the protocol"));
        }
        Ok(format!("SEGMENT {path} {}", B64.encode(self.prompt.as_bytes())))
    }

    pub fn parse(line: &str) -> Result<Self> {
        let rest = line
            .trim_end_matches(['\r', '\n'])
            .strip_prefix("SEGMENT ")
            .ok_or_else(|| Error::invalid(format!("expected SEGMENT request, got '{line}'")))?;
        let (path, prompt_b64) = rest
            .rsplit_once(' ')
            .ok_or_else(|| Error::invalid("SEGMENT request needs an image path and a prompt"))?;
        if path.is_empty() {
            return Err(Error::invalid("SEGMENT request has an empty image path"));
        }
        let prompt = B64
            .decode(prompt_b64)
            .map_err(|e| Error::invalid(format!("prompt is not base64: {e}")))?;
        let prompt =
            String::from_utf8(prompt).map_err(|_| Error::invalid("prompt is not UTF-8"))?;
        Ok(Self {
            image_path: PathBuf::from(path),
            prompt,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentResponse {
    Mask(PathBuf),
    Error(String),
}

impl SegmentResponse {
    pub fn to_line(&self) -> String {
        match self {
            SegmentResponse::Mask(p) => format!("MASK {}", p.display()),
            SegmentResponse::Error(msg) => format!("ERROR {}", msg.replace(['\n', '\r'], " ")),
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        let line = line.trim_end_matches(['\r', '\n']);
        if let Some(path) = line.strip_prefix("MASK ") {
            Ok(SegmentResponse::Mask(PathBuf::from(path)))
        } else if let Some(msg) = line.strip_prefix("ERROR ") {
            Ok(SegmentResponse::Error(msg.to_string()))
        } else if line == "ERROR" {
            Ok(SegmentResponse::Error(String::new()))
        } else {
            Err(Error::invalid(format!("unexpected segmenter response '{line}'")))
        }
    }
}

/// Agent side of the protocol: answers requests from `input` using
/// `segmenter`, writing masks into `out_dir`. Returns the number of requests
/// handled when `input` reaches end of file.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    segmenter: &dyn SegmenterBackend,
    out_dir: &Path,
) -> Result<usize> {
    let mut handled = 0;
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        handled += 1;
        let response = match handle(&line, segmenter, out_dir, handled) {
            Ok(path) => SegmentResponse::Mask(path),
            Err(e) => SegmentResponse::Error(e.to_string()),
        };
        writeln!(output, "{}", response.to_line()).map_err(|e| Error::io("<stdout>", e))?;
        output.flush().map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(handled)
}

fn handle(line: &str, segmenter: &dyn SegmenterBackend, out_dir: &Path, n: usize) -> Result<PathBuf> {
    let request = SegmentRequest::parse(line)?;
    let image = ImageRef::from_path(&request.image_path)?;
    let mask = segmenter.segment_text(&image, &request.prompt)?;
    let path = out_dir.join(format!("mask-{n:06}.png"));
    std::fs::write(&path, mask.to_png()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
