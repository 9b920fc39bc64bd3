use std::fmt;
use std::path::Path;
use std::sync::Arc;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormatTag {
    Png,
    Jpeg,
}

impl ImageFormatTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageFormatTag::Png => "png",
            ImageFormatTag::Jpeg => "jpeg",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            ImageFormatTag::Png => "image/png",
            ImageFormatTag::Jpeg => "image/jpeg",
        }
    }
}

impl fmt::Display for ImageFormatTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An encoded input image together with its decoded dimensions.
///
/// The payload is kept encoded; it is what gets hashed and sent to models.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRef {
    bytes: Arc<[u8]>,
    width: u32,
    height: u32,
    format: ImageFormatTag,
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageRef")
            .field("format", &self.format)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("bytes", &self.bytes.len())
            .finish()
    }
}

impl ImageRef {
    /// Sniffs the format and decodes the payload to learn its dimensions.
    pub fn from_bytes(bytes: impl Into<Arc<[u8]>>) -> Result<Self> {
        let bytes = bytes.into();
        let format = match image::guess_format(&bytes) {
            Ok(ImageFormat::Png) => ImageFormatTag::Png,
            Ok(ImageFormat::Jpeg) => ImageFormatTag::Jpeg,
            Ok(other) => return Err(Error::Image(format!("unsupported image format {other:?}"))),
            Err(e) => return Err(Error::Image(format!("unrecognised image payload: {e}"))),
        };
        let decoded = image::load_from_memory(&bytes)
            .map_err(|e| Error::Image(format!("cannot decode {format} image: {e}")))?;
        let (width, height) = (decoded.width(), decoded.height());
        if width == 0 || height == 0 {
            return Err(Error::Image("image has zero area".into()));
        }
        Ok(Self {
            bytes,
            width,
            height,
            format,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(bytes)
    }

    /// Encodes a decoded image as PNG.
    pub fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(Self {
            bytes: out.into_inner().into(),
            width: img.width(),
            height: img.height(),
            format: ImageFormatTag::Png,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn format(&self) -> ImageFormatTag {
        self.format
    }

    pub fn decode(&self) -> Result<DynamicImage> {
        image::load_from_memory(&self.bytes).map_err(|e| Error::Image(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn reads_dimensions_and_format() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(7, 3));
        let r = ImageRef::from_dynamic(&img).unwrap();
        let again = ImageRef::from_bytes(r.bytes().to_vec()).unwrap();
        assert_eq!(again.dimensions(), (7, 3));
        assert_eq!(again.format(), ImageFormatTag::Png);
        assert_eq!(again, r);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            ImageRef::from_bytes(b"not an image".to_vec()),
            Err(Error::Image(_))
        ));
    }
}
