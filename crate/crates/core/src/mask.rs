//! Binary masks, their single-channel image exchange format and the row-major
//! run-length encoding used on the wire.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel foreground grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    cells: Vec<bool>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut cells = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            cells,
        }
    }

    pub fn from_cells(width: u32, height: u32, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "mask grid has {} cells, expected {}x{}",
                cells.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            cells,
        })
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

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.cells[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.cells[i] = value;
    }

    fn index(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "({x}, {y}) outside mask");
        y as usize * self.width as usize + x as usize
    }

    pub fn count(&self) -> u64 {
        self.cells.iter().filter(|&&c| c).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Single-channel 8-bit PNG, 255 for foreground.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        });
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Decodes any supported image; a pixel is foreground when its luma is nonzero.
    pub fn from_image_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::Image(format!("cannot decode mask: {e}")))?
            .into_luma8();
        let (width, height) = img.dimensions();
        Ok(Self {
            width,
            height,
            cells: img.pixels().map(|p| p.0[0] != 0).collect(),
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_image_bytes(&bytes)
    }

    pub fn to_rle(&self) -> Rle {
        let runs = self
            .cells
            .chunk_by(|a, b| a == b)
            .map(|run| (run[0] as u8, run.len() as u32))
            .collect();
        Rle {
            width: self.width,
            height: self.height,
            runs,
        }
    }
}

/// Row-major run-length encoding. The first run carries the value of cell (0, 0);
/// consecutive runs alternate between 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<(u8, u32)>,
}

impl Rle {
    pub fn decode(&self) -> Result<BinaryMask> {
        let expected = self.width as u64 * self.height as u64;
        let mut cells = Vec::with_capacity(expected as usize);
        let mut previous: Option<u8> = None;
        for (i, &(value, len)) in self.runs.iter().enumerate() {
            if value > 1 {
                return Err(Error::invalid(format!("run {i}: value {value} is not 0 or 1")));
            }
            if len == 0 {
                return Err(Error::invalid(format!("run {i}: zero length")));
            }
            if previous == Some(value) {
                return Err(Error::invalid(format!("run {i}: repeats previous value")));
            }
            if cells.len() as u64 + len as u64 > expected {
                return Err(Error::invalid("runs exceed width x height"));
            }
            previous = Some(value);
            cells.extend(std::iter::repeat_n(value == 1, len as usize));
        }
        if cells.len() as u64 != expected {
            return Err(Error::invalid(format!(
                "runs cover {} cells, expected {expected}",
                cells.len()
            )));
        }
        BinaryMask::from_cells(self.width, self.height, cells)
    }
}

impl Serialize for BinaryMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rle().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Rle::deserialize(deserializer)?
            .decode()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_starts_with_first_cell_value() {
        let m = BinaryMask::from_fn(3, 2, |x, y| x == 0 && y == 0);
        assert_eq!(m.to_rle().runs, vec![(1, 1), (0, 5)]);
        let m = BinaryMask::from_fn(3, 2, |_, y| y == 1);
        assert_eq!(m.to_rle().runs, vec![(0, 3), (1, 3)]);
    }

    #[test]
    fn rle_decode_rejects_malformed_runs() {
        let bad = |runs: Vec<(u8, u32)>| Rle { width: 2, height: 2, runs }.decode().is_err();
        assert!(bad(vec![(0, 3)]));
        assert!(bad(vec![(0, 5)]));
        assert!(bad(vec![(0, 2), (0, 2)]));
        assert!(bad(vec![(0, 0), (1, 4)]));
        assert!(bad(vec![(2, 4)]));
    }

    #[test]
    fn png_exchange_treats_nonzero_as_foreground() {
        let mut img = GrayImage::new(3, 1);
        img.put_pixel(1, 0, Luma([1]));
        img.put_pixel(2, 0, Luma([200]));
        let mut bytes = Cursor::new(Vec::new());
        img.write_to(&mut bytes, ImageFormat::Png).unwrap();
        let m = BinaryMask::from_image_bytes(bytes.get_ref()).unwrap();
        assert_eq!(m.cells(), &[false, true, true]);
        assert_eq!(BinaryMask::from_image_bytes(&m.to_png().unwrap()).unwrap(), m);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize)
                .prop_map(move |cells| BinaryMask::from_cells(w, h, cells).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rle_roundtrip(m in arb_mask()) {
            let rle = m.to_rle();
            let total: u64 = rle.runs.iter().map(|r| r.1 as u64).sum();
            prop_assert_eq!(total, m.width() as u64 * m.height() as u64);
            prop_assert_eq!(rle.decode().unwrap(), m);
        }
    }
}
