use std::path::Path;
use std::sync::Arc;

use thinkfirst_core::backends::{
    cache_wrap, request_hash, KeywordMockSegmenter, MllmRequest, PromptPart, ReplayMllm, ScriptedMllm,
};
use thinkfirst_core::demo::{write_demo, DemoData};
use thinkfirst_core::eval::{render_report, ReportStyle};
use thinkfirst_core::{
    load_manifest, run_eval, Backends, ControlAnnotation, Error, EvalOptions, ImageRef, MllmBackend,
    Pipeline, PipelineMode, PromptTemplates, QueryKind, Stage, TaskMode, UserQueryKind,
};

struct Setup {
    _dir: tempfile::TempDir,
    demo: DemoData,
    pipeline: Pipeline,
    segmenter: Arc<KeywordMockSegmenter>,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path()).unwrap();
    let segmenter = Arc::new(KeywordMockSegmenter::new(DemoData::rules()));
    let mllm = Arc::new(ReplayMllm::from_dir(&demo.fixtures).unwrap());
    let pipeline = Pipeline::new(PromptTemplates::builtin(), Backends::new(mllm, segmenter.clone()));
    Setup {
        _dir: dir,
        demo,
        pipeline,
        segmenter,
    }
}

fn image(path: &Path) -> ImageRef {
    ImageRef::from_path(path).unwrap()
}

#[test]
fn flatfish_implicit_query() {
    let s = setup();
    let templates = PromptTemplates::builtin();
    let q = templates.user_query(&UserQueryKind::Implicit).unwrap();
    let out = s
        .pipeline
        .segment(&image(&s.demo.flatfish), &q, &TaskMode::Camouflage, PipelineMode::Full)
        .unwrap();
    let cot = out.cot.as_ref().unwrap();
    assert_eq!(cot.pairs.len(), 6);
    assert!(out.composed_prompt.contains("camouflaged flatfish"));
    assert!(out.composed_prompt.contains("can move like an animal"));
    assert!(out.composed_prompt.ends_with("Please segment it."));
    assert_eq!(out.mask.count(), 22 * 12);
}

#[test]
fn chair_control_uses_pseudo_prompt_on_original_image() {
    let s = setup();
    let chair = image(&s.demo.chair);
    let out = s.pipeline.segment_with_control(&chair, &s.demo.chair_annotation).unwrap();
    assert_eq!(
        out.composed_prompt,
        "The image features a modern, minimalist chair with a sleek, curvy design. Please segment the upper left section of the backrest in the image."
    );
    let calls = s.segmenter.calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].image.bytes(), chair.bytes());
    assert_eq!(calls[0].prompt, out.composed_prompt);
    assert!(!out.mask.is_empty());
}

#[test]
fn other_annotation_has_no_fixture() {
    let s = setup();
    let ann: ControlAnnotation = "box:2,2,30,30".parse().unwrap();
    let err = s.pipeline.segment_with_control(&image(&s.demo.chair), &ann).unwrap_err();
    assert!(matches!(err.root(), Error::FixtureMissing { .. }));
    assert_eq!(err.stage(), Some(Stage::Cot));
}

#[test]
fn waldo_flow_and_baseline_query() {
    let s = setup();
    let waldo = image(&s.demo.waldo);
    let out = s.pipeline.find_waldo(&waldo).unwrap();
    assert_eq!(
        s.segmenter.calls()[0].prompt,
        "Please segment the boy in the red and white striped shirt near the tent."
    );
    assert_eq!(out.mask.count(), 6 * 12);

    let baseline_query = PromptTemplates::builtin().waldo_baseline_query().to_string();
    let base = s
        .pipeline
        .segment(&waldo, &baseline_query, &TaskMode::Standard, PipelineMode::BaselineNoMllm)
        .unwrap();
    assert_eq!(base.composed_prompt, "Please segment Waldo, a boy wearing red and white striped shirt.");
}

#[test]
fn lamp_refinement_changes_the_prompt() {
    let s = setup();
    let chair = image(&s.demo.chair);
    let first = s
        .pipeline
        .segment(&chair, "Please segment the lamp next to the armchair.", &TaskMode::Standard, PipelineMode::BaselineNoMllm)
        .unwrap();
    let refined = s.pipeline.refine(&first, &chair, &s.demo.chair_annotation).unwrap();
    assert_ne!(refined.composed_prompt, first.composed_prompt);
    assert_eq!(refined.previous, Some(first.digest()));
    let again = s.pipeline.refine(&first, &chair, &s.demo.chair_annotation).unwrap();
    assert_eq!(again.mask, refined.mask);

    let out_of_bounds: ControlAnnotation = "circle:60,40,10,10".parse().unwrap();
    let err = s.pipeline.refine(&first, &chair, &out_of_bounds).unwrap_err();
    assert!(matches!(err.root(), Error::InvalidArgument(_)));
}

#[test]
fn eval_on_demo_manifest() {
    let s = setup();
    let manifest = load_manifest(&s.demo.manifest).unwrap();
    let full = run_eval(&manifest, &s.pipeline, &EvalOptions::new(QueryKind::Implicit, PipelineMode::Full)).unwrap();
    assert!((full.giou - (1.0 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
    assert!(full.per_sample.iter().all(|p| p.error.is_none()));

    let base = run_eval(
        &manifest,
        &s.pipeline,
        &EvalOptions::new(QueryKind::Implicit, PipelineMode::BaselineNoMllm),
    )
    .unwrap();
    assert!(full.giou > base.giou);

    let explicit = run_eval(&manifest, &s.pipeline, &EvalOptions::new(QueryKind::Explicit, PipelineMode::Full)).unwrap();
    assert_eq!(explicit.giou, full.giou);
    let describe = run_eval(
        &manifest,
        &s.pipeline,
        &EvalOptions::new(QueryKind::Implicit, PipelineMode::DescribeNoCot),
    )
    .unwrap();
    assert_eq!(describe.per_sample.len(), 3);
}

#[test]
fn eval_records_failures_instead_of_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path()).unwrap();
    let pipeline = Pipeline::new(
        PromptTemplates::builtin(),
        Backends::new(
            Arc::new(ScriptedMllm::constant("no structure here")),
            Arc::new(KeywordMockSegmenter::new(DemoData::rules())),
        ),
    );
    let manifest = load_manifest(&demo.manifest).unwrap();
    let report = run_eval(&manifest, &pipeline, &EvalOptions::new(QueryKind::Implicit, PipelineMode::Full)).unwrap();
    assert_eq!(report.failures(), 3);
    assert_eq!(report.giou, 0.0);
    assert!(report.per_sample[0].error.as_ref().unwrap().contains("cot-parse"));
}

#[test]
fn eval_is_independent_of_parallelism() {
    let s = setup();
    let manifest = load_manifest(&s.demo.manifest).unwrap();
    let mut opts = EvalOptions::new(QueryKind::Implicit, PipelineMode::Full);
    let serial = run_eval(&manifest, &s.pipeline, &opts).unwrap();
    opts.parallelism = 4;
    let parallel = run_eval(&manifest, &s.pipeline, &opts).unwrap();
    assert_eq!(
        render_report(&serial, ReportStyle::Json),
        render_report(&parallel, ReportStyle::Json)
    );
}

#[test]
fn cache_replays_recorded_run_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path()).unwrap();
    let cache = dir.path().join("cache");
    let flatfish = image(&demo.flatfish);
    let q = "Please segment it.";

    let run = |mllm: Arc<dyn MllmBackend>| {
        let p = Pipeline::new(
            PromptTemplates::builtin(),
            Backends::new(mllm, Arc::new(KeywordMockSegmenter::new(DemoData::rules()))),
        );
        p.segment(&flatfish, q, &TaskMode::Camouflage, PipelineMode::Full).unwrap()
    };
    let first = run(Arc::new(
        cache_wrap(ReplayMllm::from_dir(&demo.fixtures).unwrap(), &cache).unwrap(),
    ));
    // the fixtures are gone; only the cache can answer
    std::fs::remove_dir_all(&demo.fixtures).unwrap();
    std::fs::create_dir(&demo.fixtures).unwrap();
    let second = run(Arc::new(
        cache_wrap(ReplayMllm::from_dir(&demo.fixtures).unwrap(), &cache).unwrap(),
    ));
    assert!(first.same_result(&second));
    assert_eq!(first.mask.to_png().unwrap(), second.mask.to_png().unwrap());
}

#[test]
fn request_hash_matches_external_sha256() {
    // digest computed with a separate SHA-256 implementation over the
    // documented canonical serialization of this request
    let png = std::fs::read(format!("{}/tests/data/pixels.png", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let img = ImageRef::from_bytes(png).unwrap();
    let make = |t: f64| {
        MllmRequest::new(
            "You are a helpful assistant.",
            vec![PromptPart::Text("Please describe the image.".into()), PromptPart::Image(img.clone())],
            t,
            2000,
        )
        .unwrap()
    };
    assert_eq!(
        request_hash(&make(0.5)),
        "d9f974dab945a9fbfd1a0cff14cfd8c5883442c0d815b16eb793dbc91401ffca"
    );
    assert_eq!(
        request_hash(&make(0.6)),
        "54f33578a448fa520feeb301c4d7e9265e7ef3f9e41dd329d2a6668d2460a669"
    );
}
