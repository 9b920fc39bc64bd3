//! A small synthetic dataset with recorded model replies, for running every
//! flow offline with the replay backend and the keyword mock segmenter.

use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};

use crate::backends::{request_hash, KeywordRule, MllmRequest};
use crate::control::{render_annotation, ControlAnnotation};
use crate::cot::build_cot_request;
use crate::error::{Error, Result};
use crate::eval::MANIFEST_HEADER;
use crate::image_ref::ImageRef;
use crate::mask::BinaryMask;
use crate::pipeline::describe_request;
use crate::prompt::{PromptTemplates, TaskMode};

pub const FLATFISH_TRANSCRIPT: &str = include_str!("../fixtures/transcripts/flatfish.txt");
pub const CHAIR_TRANSCRIPT: &str = include_str!("../fixtures/transcripts/chair.txt");
pub const WALDO_TRANSCRIPT: &str = include_str!("../fixtures/transcripts/waldo.txt");

/// Control drawn over the chair backrest in the demo scene.
pub const CHAIR_ANNOTATION: &str = "circle:20,14,8,6";

/// Keyword rules matching the demo replies.
pub const RULES: &[&str] = &[
    "crab=rect:0,0,4,2",
    "flatfish=rect:30,20,52,32",
    "backrest=rect:14,6,30,22",
    "boy,striped=rect:44,8,50,20",
];

struct EvalScene {
    id: &'static str,
    color: [u8; 3],
    class: &'static str,
    gt_rows: std::ops::Range<u32>,
    transcript: &'static str,
    description: &'static str,
}

// Against the "crab" rule (rows 0-1 of a 4x4 image) these score IoU 1, 4/12 and 0.
const EVAL_SCENES: [EvalScene; 3] = [
    EvalScene {
        id: "crab-hit",
        color: [194, 178, 128],
        class: "crab",
        gt_rows: 0..2,
        transcript: "- What is on the sand?: A small crab with a sandy shell.\n- Where is it?: In the upper half of the image.\n- Summary: A camouflaged crab rests in the upper half of a sandy patch.",
        description: "A small crab sits on sand.",
    },
    EvalScene {
        id: "crab-half",
        color: [180, 160, 120],
        class: "crab",
        gt_rows: 1..3,
        transcript: "- What is on the sand?: A crab partly buried.\n- Summary: A sandy patch hides a crab near its middle.",
        description: "A crab is half buried in the sand.",
    },
    EvalScene {
        id: "seahorse-miss",
        color: [90, 140, 120],
        class: "seahorse",
        gt_rows: 2..4,
        transcript: "- What is in the water?: A seahorse holding on to seagrass.\n- Summary: A seahorse blends into green seagrass near the bottom.",
        description: "A seahorse among seagrass.",
    },
];

#[derive(Debug, Clone)]
pub struct DemoData {
    pub root: PathBuf,
    /// Three-sample evaluation manifest.
    pub manifest: PathBuf,
    /// Replay fixtures, `<request_hash>.txt`.
    pub fixtures: PathBuf,
    pub flatfish: PathBuf,
    pub chair: PathBuf,
    pub waldo: PathBuf,
    pub chair_annotation: ControlAnnotation,
}

impl DemoData {
    pub fn rules() -> Vec<KeywordRule> {
        RULES
            .iter()
            .map(|r| r.parse().expect("demo rules parse"))
            .collect()
    }
}

fn save(path: &Path, image: &RgbImage) -> Result<ImageRef> {
    let img = ImageRef::from_dynamic(&DynamicImage::ImageRgb8(image.clone()))?;
    std::fs::write(path, img.bytes()).map_err(|e| Error::io(path, e))?;
    Ok(img)
}

fn record(dir: &Path, request: &MllmRequest, text: &str) -> Result<()> {
    let path = dir.join(format!("{}.txt", request_hash(request)));
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn flatfish_scene() -> RgbImage {
    RgbImage::from_fn(64, 48, |x, y| {
        let (dx, dy) = (x as f64 - 41.0, y as f64 - 26.0);
        let fish = (dx / 11.0).powi(2) + (dy / 6.0).powi(2) <= 1.0;
        let grain = ((x * 7 + y * 13) % 11) as u8;
        if fish {
            Rgb([176 + grain, 158 + grain, 120])
        } else {
            Rgb([196 + grain, 180 + grain, 138])
        }
    })
}

fn chair_scene() -> RgbImage {
    RgbImage::from_fn(64, 48, |x, y| {
        let backrest = (14..30).contains(&x) && (6..22).contains(&y);
        let seat = (14..44).contains(&x) && (22..28).contains(&y);
        let leg = (28..44).contains(&y) && (x == 16 || x == 17 || x == 40 || x == 41);
        if backrest || seat || leg {
            Rgb([230, 120, 30])
        } else {
            Rgb([245, 245, 240])
        }
    })
}

fn waldo_scene() -> RgbImage {
    RgbImage::from_fn(64, 48, |x, y| {
        let boy = (44..50).contains(&x) && (8..20).contains(&y);
        if boy {
            if y % 2 == 0 {
                Rgb([220, 20, 30])
            } else {
                Rgb([250, 250, 250])
            }
        } else {
            let v = ((x * 31 + y * 17) % 97) as u8;
            Rgb([100 + v, 60 + v / 2, 140 - v / 2])
        }
    })
}

/// Writes the demo images, masks, manifest and replay fixtures under `root`.
pub fn write_demo(root: &Path) -> Result<DemoData> {
    let templates = PromptTemplates::builtin();
    let fixtures = root.join("fixtures");
    let data_dir = root.join("data");
    for dir in [&fixtures, &data_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for scene in &EVAL_SCENES {
        let image = save(
            &data_dir.join(format!("{}.png", scene.id)),
            &RgbImage::from_pixel(4, 4, Rgb(scene.color)),
        )?;
        let gt = BinaryMask::from_fn(4, 4, |_, y| scene.gt_rows.contains(&y));
        let gt_path = data_dir.join(format!("{}_gt.png", scene.id));
        std::fs::write(&gt_path, gt.to_png()?).map_err(|e| Error::io(&gt_path, e))?;
        manifest.push_str(&format!(
            "{id}\tdata/{id}.png\tdata/{id}_gt.png\t{}\ttest\n",
            scene.class,
            id = scene.id
        ));

        for mode in [TaskMode::Camouflage, TaskMode::explicit(scene.class)] {
            let request = build_cot_request(&image, &templates.bundle(&mode)?)?;
            record(&fixtures, &request, scene.transcript)?;
        }
        record(&fixtures, &describe_request(&templates, &image)?, scene.description)?;
    }
    let manifest_path = root.join("demo.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let flatfish_path = root.join("flatfish.png");
    let flatfish = save(&flatfish_path, &flatfish_scene())?;
    for mode in [TaskMode::Camouflage, TaskMode::Standard, TaskMode::explicit("flatfish")] {
        let request = build_cot_request(&flatfish, &templates.bundle(&mode)?)?;
        record(&fixtures, &request, FLATFISH_TRANSCRIPT)?;
    }
    record(
        &fixtures,
        &describe_request(&templates, &flatfish)?,
        "The image shows a sandy seabed with small pieces of debris.",
    )?;

    let chair_path = root.join("chair.png");
    let chair = save(&chair_path, &chair_scene())?;
    let chair_annotation: ControlAnnotation = CHAIR_ANNOTATION.parse()?;
    let annotated = render_annotation(&chair, &chair_annotation)?;
    let request = build_cot_request(&annotated.image, &templates.bundle(&TaskMode::Control)?)?;
    record(&fixtures, &request, CHAIR_TRANSCRIPT)?;

    let waldo_path = root.join("waldo.png");
    let waldo = save(&waldo_path, &waldo_scene())?;
    let request = build_cot_request(&waldo, &templates.bundle(&TaskMode::Waldo)?)?;
    record(&fixtures, &request, WALDO_TRANSCRIPT)?;

    Ok(DemoData {
        root: root.to_path_buf(),
        manifest: manifest_path,
        fixtures,
        flatfish: flatfish_path,
        chair: chair_path,
        waldo: waldo_path,
        chair_annotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_is_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_demo(a.path()).unwrap();
        write_demo(b.path()).unwrap();
        let list = |d: &Path| {
            let mut v: Vec<_> = std::fs::read_dir(d.join("fixtures"))
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            v.sort();
            v
        };
        assert_eq!(list(a.path()), list(b.path()));
        // 3 x (2 cot + describe) + 4 flatfish + chair + waldo, all distinct
        assert_eq!(list(a.path()).len(), 15);
        assert_eq!(
            std::fs::read(a.path().join("chair.png")).unwrap(),
            std::fs::read(b.path().join("chair.png")).unwrap()
        );
        assert_eq!(DemoData::rules().len(), RULES.len());
    }
}
