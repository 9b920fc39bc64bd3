//! Dataset manifests, IoU metrics and evaluation runs.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_ref::ImageRef;
use crate::mask::BinaryMask;
use crate::pipeline::{Pipeline, PipelineMode};
use crate::prompt::{TaskMode, UserQueryKind};

pub const MANIFEST_HEADER: &str = "#thinkfirst-manifest v1";

/// Intersection and union pixel counts.
pub fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<(u64, u64)> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::invalid(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    Ok((inter, union))
}

fn ratio(inter: u64, union: u64) -> f64 {
    // both masks empty counts as a perfect match
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union; two empty masks score 1, one empty mask scores 0.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (i, u) = overlap(pred, gt)?;
    Ok(ratio(i, u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub iou: f64,
    pub intersection: u64,
    pub union: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleScore {
    pub fn new(id: impl Into<String>, pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let (intersection, union) = overlap(pred, gt)?;
        Ok(Self {
            id: id.into(),
            iou: ratio(intersection, union),
            intersection,
            union,
            error: None,
        })
    }

    /// A sample whose prediction failed; scored as an empty prediction with IoU 0.
    pub fn failed(id: impl Into<String>, gt: &BinaryMask, error: impl fmt::Display) -> Self {
        Self {
            id: id.into(),
            iou: 0.0,
            intersection: 0,
            union: gt.count(),
            error: Some(error.to_string()),
        }
    }
}

/// What was evaluated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub mode: Option<PipelineMode>,
    pub query_kind: Option<QueryKind>,
    pub backends: Vec<String>,
}

impl RunDescriptor {
    pub fn label(&self) -> String {
        let mode = self.mode.map_or("-".to_string(), |m| m.to_string());
        let kind = self.query_kind.map_or("-".to_string(), |k| k.to_string());
        format!("{mode}/{kind}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_sample: Vec<SampleScore>,
    pub giou: f64,
    pub ciou: f64,
    pub config: RunDescriptor,
}

impl MetricsReport {
    /// gIoU is the mean per-sample IoU, cIoU the summed intersections over the
    /// summed unions (1 when every union is empty).
    pub fn from_scores(per_sample: Vec<SampleScore>, config: RunDescriptor) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty sample list"));
        }
        let giou = per_sample.iter().map(|s| s.iou).sum::<f64>() / per_sample.len() as f64;
        let inter: u64 = per_sample.iter().map(|s| s.intersection).sum();
        let union: u64 = per_sample.iter().map(|s| s.union).sum();
        Ok(Self {
            giou,
            ciou: ratio(inter, union),
            per_sample,
            config,
        })
    }

    pub fn failures(&self) -> usize {
        self.per_sample.iter().filter(|s| s.error.is_some()).count()
    }
}

/// Scores `(prediction, ground truth)` pairs; samples are named by position.
pub fn aggregate(pairs: &[(BinaryMask, BinaryMask)]) -> Result<MetricsReport> {
    let scores = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, g))| SampleScore::new(i.to_string(), p, g))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_scores(scores, RunDescriptor::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    Table,
    Json,
}

impl FromStr for ReportStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportStyle::Table),
            "json" => Ok(ReportStyle::Json),
            other => Err(Error::invalid(format!("unknown report style '{other}'"))),
        }
    }
}

pub fn render_report(report: &MetricsReport, style: ReportStyle) -> String {
    match style {
        ReportStyle::Table => render_table(std::slice::from_ref(report)),
        ReportStyle::Json => serde_json::to_string_pretty(report).expect("report serializes"),
    }
}

/// One row per report, scores in percent with one decimal.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let labels: Vec<String> = reports.iter().map(|r| r.config.label()).collect();
    let width = labels.iter().map(String::len).chain([6]).max().unwrap_or(6);
    let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>7}\n", "config", "gIoU", "cIoU", "samples");
    for (label, r) in labels.iter().zip(reports) {
        out.push_str(&format!(
            "{:<width$}  {:>7.1}  {:>7.1}  {:>7}\n",
            label,
            r.giou * 100.0,
            r.ciou * 100.0,
            r.per_sample.len()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Implicit,
    Explicit,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryKind::Implicit => "implicit",
            QueryKind::Explicit => "explicit",
        })
    }
}

impl FromStr for QueryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit" => Ok(QueryKind::Implicit),
            "explicit" => Ok(QueryKind::Explicit),
            other => Err(Error::invalid(format!("unknown query kind '{other}'"))),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub image: ImageRef,
    pub gt_mask: BinaryMask,
    pub object_class: Option<String>,
    pub split: Split,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub samples: Vec<EvalSample>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }
}

/// Reads a manifest: a `#thinkfirst-manifest v1` header, then one tab
/// separated row per sample, `<id> <image> <mask> <class|-> <train|test>`.
/// Relative paths resolve against the manifest's directory. Blank lines and
/// further `#` lines are skipped.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(Error::Manifest(format!("missing '{MANIFEST_HEADER}' header"))),
    }

    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    let mut row = 0;
    for (_, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        row += 1;
        let err = |msg: String| Error::Manifest(format!("row {row}: {msg}"));
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let [id, image, mask, class, split] = fields[..] else {
            return Err(err(format!("expected 5 tab-separated fields, found {}", fields.len())));
        };
        if id.is_empty() {
            return Err(err("empty id".into()));
        }
        if !ids.insert(id.to_string()) {
            return Err(err(format!("duplicate id '{id}'")));
        }
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(err(format!("split must be train or test, found '{other}'"))),
        };
        let object_class = match class {
            "-" | "" => None,
            c => Some(c.to_string()),
        };
        let image_path = base.join(image);
        let mask_path = base.join(mask);
        if !image_path.is_file() {
            return Err(err("image not found".into()));
        }
        if !mask_path.is_file() {
            return Err(err("mask not found".into()));
        }
        let image = ImageRef::from_path(&image_path).map_err(|e| err(e.to_string()))?;
        let gt_mask = load_mask(&mask_path).map_err(|e| err(e.to_string()))?;
        if gt_mask.dimensions() != image.dimensions() {
            return Err(err(format!(
                "mask is {}x{} but image is {}x{}",
                gt_mask.width(),
                gt_mask.height(),
                image.width(),
                image.height()
            )));
        }
        samples.push(EvalSample {
            id: id.to_string(),
            image,
            gt_mask,
            object_class,
            split,
            image_path,
            mask_path,
        });
    }
    if samples.is_empty() {
        return Err(Error::Manifest("manifest has no samples".into()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetManifest { name, samples })
}

/// Loads a ground-truth mask: polygon annotations for `.json`, otherwise an
/// image where nonzero pixels are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        polygon_mask_from_json(&text)
    } else {
        BinaryMask::from_path(path)
    }
}

#[derive(Deserialize)]
struct PolygonFile {
    #[serde(rename = "imageWidth")]
    width: u32,
    #[serde(rename = "imageHeight")]
    height: u32,
    shapes: Vec<PolygonShape>,
}

#[derive(Deserialize)]
struct PolygonShape {
    points: Vec<(f64, f64)>,
    #[serde(default)]
    shape_type: Option<String>,
}

/// Rasterizes a labelme-style polygon file (`imageWidth`, `imageHeight`,
/// `shapes[].points`). Shapes are filled even-odd and merged.
pub fn polygon_mask_from_json(text: &str) -> Result<BinaryMask> {
    let file: PolygonFile =
        serde_json::from_str(text).map_err(|e| Error::Image(format!("polygon file: {e}")))?;
    let mut mask = BinaryMask::empty(file.width, file.height);
    for shape in &file.shapes {
        if shape.shape_type.as_deref().is_some_and(|t| t != "polygon") {
            continue;
        }
        let filled = rasterize_polygon(&shape.points, file.width, file.height);
        for y in 0..file.height {
            for x in 0..file.width {
                if filled.get(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Even-odd fill sampled at pixel centers.
pub fn rasterize_polygon(points: &[(f64, f64)], width: u32, height: u32) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut inside = false;
        for i in 0..points.len() {
            let (xi, yi) = points[i];
            let (xj, yj) = points[(i + points.len() - 1) % points.len()];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
        }
        inside
    })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub query_kind: QueryKind,
    pub mode: PipelineMode,
    /// Task prompt for the model. `None` picks camouflage for implicit
    /// queries and the sample's object class for explicit ones.
    pub task_mode: Option<TaskMode>,
    pub parallelism: usize,
}

impl EvalOptions {
    pub fn new(query_kind: QueryKind, mode: PipelineMode) -> Self {
        Self {
            query_kind,
            mode,
            task_mode: None,
            parallelism: 1,
        }
    }
}

/// Runs the pipeline over every sample. A failing sample is scored with IoU 0
/// and its error kept in the report instead of aborting the run.
pub fn run_eval(
    manifest: &DatasetManifest,
    pipeline: &Pipeline,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if options.query_kind == QueryKind::Explicit {
        if let Some(s) = manifest.samples.iter().find(|s| s.object_class.is_none()) {
            return Err(Error::invalid(format!(
                "explicit queries need an object class; sample '{}' has none",
                s.id
            )));
        }
    }
    let score = |sample: &EvalSample| -> SampleScore {
        match predict(sample, pipeline, options) {
            Ok(mask) => SampleScore::new(&sample.id, &mask, &sample.gt_mask)
                .unwrap_or_else(|e| SampleScore::failed(&sample.id, &sample.gt_mask, e)),
            Err(e) => {
                log::warn!("sample {} failed: {e}", sample.id);
                SampleScore::failed(&sample.id, &sample.gt_mask, e)
            }
        }
    };
    let scores: Vec<SampleScore> = if options.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| manifest.samples.par_iter().map(score).collect())
    } else {
        manifest.samples.iter().map(score).collect()
    };
    let backends = pipeline.backends();
    let config = RunDescriptor {
        mode: Some(options.mode),
        query_kind: Some(options.query_kind),
        backends: vec![
            backends.mllm.descriptor().name,
            backends.segmenter.descriptor().name,
        ],
    };
    MetricsReport::from_scores(scores, config)
}

fn predict(sample: &EvalSample, pipeline: &Pipeline, options: &EvalOptions) -> Result<BinaryMask> {
    let templates = pipeline.templates();
    let (query, default_task) = match options.query_kind {
        QueryKind::Implicit => (templates.user_query(&UserQueryKind::Implicit)?, TaskMode::Camouflage),
        QueryKind::Explicit => {
            let class = sample.object_class.clone().unwrap_or_default();
            (
                templates.user_query(&UserQueryKind::Explicit {
                    object_class: class.clone(),
                })?,
                TaskMode::explicit(class),
            )
        }
    };
    let task = options.task_mode.clone().unwrap_or(default_task);
    Ok(pipeline.segment(&sample.image, &query, &task, options.mode)?.mask)
}
