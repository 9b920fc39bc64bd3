//! Casual image-based controls: a circle, a star point or a bounding box drawn
//! onto a copy of the input image before it is shown to the multimodal model.

use std::fmt;
use std::str::FromStr;

use image::{DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_ref::ImageRef;

pub const DEFAULT_COLOR: [u8; 3] = [255, 0, 0];
/// Inner radius of the star relative to its outer radius.
pub const STAR_INNER_RATIO: f64 = 0.45;
const MIN_RADIUS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Unfilled ellipse outline.
    Circle { cx: u32, cy: u32, rx: u32, ry: u32 },
    /// Filled five-pointed star.
    StarPoint { cx: u32, cy: u32, r: u32 },
    /// Unfilled rectangle outline; corners are inclusive pixel coordinates.
    BoundingBox { x0: u32, y0: u32, x1: u32, y1: u32 },
}

impl Shape {
    /// Inclusive pixel extent `(x0, y0, x1, y1)`; may reach past the image edge.
    fn extent(&self) -> (i64, i64, i64, i64) {
        match *self {
            Shape::Circle { cx, cy, rx, ry } => (
                cx as i64 - rx as i64,
                cy as i64 - ry as i64,
                cx as i64 + rx as i64,
                cy as i64 + ry as i64,
            ),
            Shape::StarPoint { cx, cy, r } => (
                cx as i64 - r as i64,
                cy as i64 - r as i64,
                cx as i64 + r as i64,
                cy as i64 + r as i64,
            ),
            Shape::BoundingBox { x0, y0, x1, y1 } => (x0 as i64, y0 as i64, x1 as i64, y1 as i64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlAnnotation {
    pub shape: Shape,
    /// `None` picks `max(2, round(min(width, height) / 150))` at render time.
    #[serde(default)]
    pub stroke_width: Option<u32>,
    #[serde(default = "default_color")]
    pub color: [u8; 3],
}

fn default_color() -> [u8; 3] {
    DEFAULT_COLOR
}

/// Stroke width used when the annotation does not set one.
pub fn default_stroke_width(width: u32, height: u32) -> u32 {
    ((width.min(height) as f64 / 150.0).round() as u32).max(2)
}

impl ControlAnnotation {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            stroke_width: None,
            color: DEFAULT_COLOR,
        }
    }

    /// Fits a free-hand scribble to its bounding ellipse.
    pub fn from_scribble(points: &[(u32, u32)]) -> Result<Self> {
        let (first, rest) = points
            .split_first()
            .ok_or_else(|| Error::invalid("scribble has no points"))?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.0, first.1, first.0, first.1);
        for &(x, y) in rest {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Ok(Self::new(Shape::Circle {
            cx: (x0 + x1) / 2,
            cy: (y0 + y1) / 2,
            rx: (x1 - x0).div_ceil(2),
            ry: (y1 - y0).div_ceil(2),
        }))
    }

    pub fn effective_stroke(&self, width: u32, height: u32) -> u32 {
        self.stroke_width
            .unwrap_or_else(|| default_stroke_width(width, height))
    }

    /// Returns the first violated rule for an image of the given size.
    pub fn validate(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        match self.shape {
            Shape::BoundingBox { x0, y0, x1, y1 } => {
                if x0 >= x1 {
                    return Err("x0<x1 violated".into());
                }
                if y0 >= y1 {
                    return Err("y0<y1 violated".into());
                }
            }
            Shape::Circle { rx, ry, .. } => {
                if rx < MIN_RADIUS || ry < MIN_RADIUS {
                    return Err(format!("radius below {MIN_RADIUS} px"));
                }
            }
            Shape::StarPoint { r, .. } => {
                if r < MIN_RADIUS {
                    return Err(format!("radius below {MIN_RADIUS} px"));
                }
            }
        }
        if self.stroke_width == Some(0) {
            return Err("stroke width must be positive".into());
        }
        let (x0, y0, x1, y1) = self.shape.extent();
        if x0 < 0 || y0 < 0 || x1 >= width as i64 || y1 >= height as i64 {
            return Err("out of bounds".into());
        }
        Ok(())
    }

    fn check(&self, width: u32, height: u32) -> Result<()> {
        self.validate(width, height)
            .map_err(|rule| Error::invalid(format!("annotation {self}: {rule}")))
    }
}

/// The literal grammar shared by the CLI and the service:
/// `circle:cx,cy,rx,ry`, `star:cx,cy,r`, `box:x0,y0,x1,y1`.
impl fmt::Display for ControlAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.shape {
            Shape::Circle { cx, cy, rx, ry } => write!(f, "circle:{cx},{cy},{rx},{ry}"),
            Shape::StarPoint { cx, cy, r } => write!(f, "star:{cx},{cy},{r}"),
            Shape::BoundingBox { x0, y0, x1, y1 } => write!(f, "box:{x0},{y0},{x1},{y1}"),
        }
    }
}

impl FromStr for ControlAnnotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("annotation '{s}' needs a kind prefix")))?;
        let nums = args
            .split(',')
            .map(|n| n.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("annotation '{s}': {e}")))?;
        let shape = match (kind, nums.as_slice()) {
            ("circle", &[cx, cy, rx, ry]) => Shape::Circle { cx, cy, rx, ry },
            ("star", &[cx, cy, r]) => Shape::StarPoint { cx, cy, r },
            ("box", &[x0, y0, x1, y1]) => Shape::BoundingBox { x0, y0, x1, y1 },
            ("circle" | "star" | "box", _) => {
                return Err(Error::invalid(format!(
                    "annotation '{s}' has the wrong number of coordinates"
                )))
            }
            _ => return Err(Error::invalid(format!("unknown annotation kind '{kind}'"))),
        };
        Ok(Self::new(shape))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: ImageRef,
    pub source: ImageRef,
    pub annotation: ControlAnnotation,
}

/// Draws the annotation onto a copy of `source`. The copy is PNG encoded; the
/// source is left untouched.
pub fn render_annotation(source: &ImageRef, ann: &ControlAnnotation) -> Result<AnnotatedImage> {
    let (w, h) = source.dimensions();
    ann.check(w, h)?;
    let mut canvas: RgbImage = source.decode()?.into_rgb8();
    let stroke = ann.effective_stroke(w, h) as f64;
    let color = Rgb(ann.color);
    let (ex0, ey0, ex1, ey1) = ann.shape.extent();

    for y in ey0 as u32..=ey1 as u32 {
        for x in ex0 as u32..=ex1 as u32 {
            if covers(&ann.shape, stroke, x, y) {
                canvas.put_pixel(x, y, color);
            }
        }
    }
    Ok(AnnotatedImage {
        image: ImageRef::from_dynamic(&DynamicImage::ImageRgb8(canvas))?,
        source: source.clone(),
        annotation: ann.clone(),
    })
}

fn covers(shape: &Shape, stroke: f64, x: u32, y: u32) -> bool {
    match *shape {
        Shape::BoundingBox { x0, y0, x1, y1 } => {
            // stroke drawn inward from the edges
            let d = (x - x0).min(x1 - x).min(y - y0).min(y1 - y);
            (d as f64) < stroke
        }
        Shape::Circle { cx, cy, rx, ry } => {
            let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
            let (rx, ry) = (rx as f64, ry as f64);
            let f = (dx / rx).powi(2) + (dy / ry).powi(2) - 1.0;
            let grad = ((2.0 * dx / (rx * rx)).powi(2) + (2.0 * dy / (ry * ry)).powi(2)).sqrt();
            if grad == 0.0 {
                return false;
            }
            // first-order distance to the ellipse, negative inside
            let dist = f / grad;
            dist <= 0.0 && dist > -stroke
        }
        Shape::StarPoint { cx, cy, r } => {
            point_in_star(x as f64 - cx as f64, y as f64 - cy as f64, r as f64)
        }
    }
}

fn star_vertices(r: f64) -> [(f64, f64); 10] {
    let mut out = [(0.0, 0.0); 10];
    for (i, v) in out.iter_mut().enumerate() {
        let radius = if i % 2 == 0 { r } else { r * STAR_INNER_RATIO };
        // first point straight up
        let angle = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / 5.0;
        *v = (radius * angle.cos(), radius * angle.sin());
    }
    out
}

fn point_in_star(px: f64, py: f64, r: f64) -> bool {
    let verts = star_vertices(r);
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}
