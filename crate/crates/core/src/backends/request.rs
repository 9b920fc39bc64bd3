use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image_ref::ImageRef;

#[derive(Debug, Clone, PartialEq)]
pub enum PromptPart {
    Text(String),
    Image(ImageRef),
}

/// One completion request to a multimodal model.
#[derive(Debug, Clone, PartialEq)]
pub struct MllmRequest {
    system_context: String,
    parts: Vec<PromptPart>,
    temperature: f64,
    max_output_tokens: u32,
}

impl MllmRequest {
    /// Requires exactly one image part and at least one text part.
    pub fn new(
        system_context: impl Into<String>,
        parts: Vec<PromptPart>,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<Self> {
        let images = parts
            .iter()
            .filter(|p| matches!(p, PromptPart::Image(_)))
            .count();
        if images != 1 {
            return Err(Error::invalid(format!(
                "request needs exactly one image attachment, got {images}"
            )));
        }
        if parts.len() == images {
            return Err(Error::invalid("request needs at least one text part"));
        }
        if max_output_tokens == 0 {
            return Err(Error::invalid("max_output_tokens must be positive"));
        }
        if !temperature.is_finite() {
            return Err(Error::invalid("temperature must be finite"));
        }
        Ok(Self {
            system_context: system_context.into(),
            parts,
            temperature,
            max_output_tokens,
        })
    }

    pub fn system_context(&self) -> &str {
        &self.system_context
    }

    pub fn parts(&self) -> &[PromptPart] {
        &self.parts
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.max_output_tokens
    }

    pub fn image(&self) -> &ImageRef {
        self.parts
            .iter()
            .find_map(|p| match p {
                PromptPart::Image(img) => Some(img),
                PromptPart::Text(_) => None,
            })
            .expect("validated in new")
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            PromptPart::Text(t) => Some(t.as_str()),
            PromptPart::Image(_) => None,
        })
    }

    /// Byte string the request hash is computed over:
    ///
    /// ```text
    /// <image format>\n<temperature, 6 decimals>\n<max tokens>\n
    /// S<len>:<system context>
    /// then per part, in order: T<len>:<utf-8 text> or I<len>:<image payload>
    /// ```
    ///
    /// Lengths are decimal byte counts.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.image().format().as_str().as_bytes());
        out.push(b'\n');
        out.extend_from_slice(format!("{:.6}\n", self.temperature).as_bytes());
        out.extend_from_slice(format!("{}\n", self.max_output_tokens).as_bytes());
        push_field(&mut out, b'S', self.system_context.as_bytes());
        for part in &self.parts {
            match part {
                PromptPart::Text(t) => push_field(&mut out, b'T', t.as_bytes()),
                PromptPart::Image(img) => push_field(&mut out, b'I', img.bytes()),
            }
        }
        out
    }
}

fn push_field(out: &mut Vec<u8>, tag: u8, bytes: &[u8]) {
    out.push(tag);
    out.extend_from_slice(bytes.len().to_string().as_bytes());
    out.push(b':');
    out.extend_from_slice(bytes);
}

/// Lowercase hex SHA-256 of [`MllmRequest::canonical_bytes`].
pub fn request_hash(request: &MllmRequest) -> String {
    hex::encode(Sha256::digest(request.canonical_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{DynamicImage, RgbImage};

    fn image() -> ImageRef {
        ImageRef::from_dynamic(&DynamicImage::ImageRgb8(RgbImage::new(2, 2))).unwrap()
    }

    fn request(temperature: f64) -> MllmRequest {
        MllmRequest::new(
            "sys",
            vec![
                PromptPart::Text("env".into()),
                PromptPart::Text("task".into()),
                PromptPart::Image(image()),
            ],
            temperature,
            2000,
        )
        .unwrap()
    }

    #[test]
    fn shape_is_validated() {
        assert!(MllmRequest::new("s", vec![PromptPart::Image(image())], 0.5, 10).is_err());
        assert!(MllmRequest::new("s", vec![PromptPart::Text("t".into())], 0.5, 10).is_err());
        assert!(MllmRequest::new(
            "s",
            vec![
                PromptPart::Text("t".into()),
                PromptPart::Image(image()),
                PromptPart::Image(image())
            ],
            0.5,
            10
        )
        .is_err());
        assert!(MllmRequest::new(
            "s",
            vec![PromptPart::Text("t".into()), PromptPart::Image(image())],
            0.5,
            0
        )
        .is_err());
    }

    #[test]
    fn equal_requests_hash_equal() {
        assert_eq!(request_hash(&request(0.5)), request_hash(&request(0.5)));
        assert_ne!(request_hash(&request(0.5)), request_hash(&request(0.6)));
    }

    #[test]
    fn length_prefix_separates_fields() {
        let a = MllmRequest::new(
            "s",
            vec![
                PromptPart::Text("ab".into()),
                PromptPart::Text("c".into()),
                PromptPart::Image(image()),
            ],
            0.5,
            1,
        )
        .unwrap();
        let b = MllmRequest::new(
            "s",
            vec![
                PromptPart::Text("a".into()),
                PromptPart::Text("bc".into()),
                PromptPart::Image(image()),
            ],
            0.5,
            1,
        )
        .unwrap();
        assert_ne!(request_hash(&a), request_hash(&b));
    }
}
