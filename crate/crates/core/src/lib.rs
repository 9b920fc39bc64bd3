//! Training-free reasoning segmentation: a multimodal model describes the
//! image as a chain of questions and answers, its summary is joined with the
//! user's query, and a segmentation backend turns the result into a mask.
//!
//! Backends are traits so runs can be replayed offline from recorded
//! transcripts with a keyword-driven mock segmenter.

pub mod backends;
pub mod control;
pub mod cot;
pub mod demo;
pub mod error;
pub mod eval;
pub mod image_ref;
pub mod mask;
pub mod pipeline;
pub mod prompt;

pub use backends::{BackendDescriptor, BackendKind, MllmBackend, SegmenterBackend};
pub use control::{render_annotation, AnnotatedImage, ControlAnnotation, Shape};
pub use cot::{parse_transcript, render_transcript, run_cot, CotResult, OnFailure, QaPair, RetryPolicy};
pub use error::{Error, ErrorKind, Result, Stage};
pub use eval::{aggregate, iou, load_manifest, run_eval, DatasetManifest, EvalOptions, MetricsReport, QueryKind};
pub use image_ref::{ImageFormatTag, ImageRef};
pub use mask::{BinaryMask, Rle};
pub use pipeline::{Backends, Pipeline, PipelineMode, SegmentationOutcome};
pub use prompt::{compose_query, PromptBundle, PromptTemplates, TaskMode, UserQueryKind};
