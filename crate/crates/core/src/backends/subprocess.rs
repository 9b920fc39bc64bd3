use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::protocol::{SegmentRequest, SegmentResponse};
use super::{BackendDescriptor, BackendKind, SegmenterBackend};
use crate::error::{Error, Result};
use crate::image_ref::ImageRef;
use crate::mask::BinaryMask;

struct Running {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Segmentation agent running as an external process (e.g. a LISA wrapper),
/// driven over the [`protocol`](super::protocol) on its stdin/stdout.
///
/// The process is started on first use and restarted after it dies. Calls are
/// serialized; the backend reports `concurrency_safe = false`.
pub struct SubprocessSegmenter {
    name: String,
    command: Vec<String>,
    workdir: tempfile::TempDir,
    state: Mutex<(Option<Running>, u64)>,
}

impl SubprocessSegmenter {
    pub fn new(name: impl Into<String>, command: Vec<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("segmenter command is empty".into()));
        }
        let workdir = tempfile::Builder::new()
            .prefix("thinkfirst-seg-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(Self {
            name: name.into(),
            command,
            workdir,
            state: Mutex::new((None, 0)),
        })
    }

    fn spawn(&self) -> Result<Running> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::backend(&self.name, format!("cannot start {}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Running {
            child,
            stdin,
            stdout,
        })
    }

    fn exchange(running: &mut Running, line: &str) -> std::io::Result<String> {
        writeln!(running.stdin, "{line}")?;
        running.stdin.flush()?;
        let mut response = String::new();
        if running.stdout.read_line(&mut response)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "segmenter closed its output",
            ));
        }
        Ok(response)
    }
}

impl SegmenterBackend for SubprocessSegmenter {
    fn segment_text(&self, image: &ImageRef, prompt: &str) -> Result<BinaryMask> {
        if prompt.trim().is_empty() {
            return Err(Error::invalid("segmentation prompt is empty"));
        }
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state.1 += 1;
        let image_path: PathBuf = self
            .workdir
            .path()
            .join(format!("request-{:06}.{}", state.1, image.format()));
        std::fs::write(&image_path, image.bytes()).map_err(|e| Error::io(&image_path, e))?;
        let line = SegmentRequest {
            image_path: image_path.clone(),
            prompt: prompt.to_string(),
        }
        .to_line()?;

        if state.0.is_none() {
            state.0 = Some(self.spawn()?);
        }
        let running = state.0.as_mut().expect("spawned above");
        let reply = Self::exchange(running, &line);
        let _ = std::fs::remove_file(&image_path);
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                // drop the dead process; the next call restarts it
                state.0 = None;
                return Err(Error::backend(&self.name, e));
            }
        };
        match SegmentResponse::parse(&reply).map_err(|e| Error::backend(&self.name, e))? {
            SegmentResponse::Error(msg) => Err(Error::backend(&self.name, msg)),
            SegmentResponse::Mask(path) => {
                let mask = BinaryMask::from_path(&path).map_err(|e| Error::backend(&self.name, e))?;
                if mask.dimensions() != image.dimensions() {
                    return Err(Error::backend(
                        &self.name,
                        format!(
                            "mask is {}x{} but image is {}x{}",
                            mask.width(),
                            mask.height(),
                            image.width(),
                            image.height()
                        ),
                    ));
                }
                Ok(mask)
            }
        }
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(&self.name, BackendKind::Segmenter, false)
            .with("command", self.command.join(" "))
    }

    fn health(&self) -> Result<()> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(running) = state.0.as_mut() {
            if let Ok(Some(status)) = running.child.try_wait() {
                state.0 = None;
                return Err(Error::backend(&self.name, format!("process exited: {status}")));
            }
        }
        Ok(())
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use image::{DynamicImage, RgbImage};

    fn image(w: u32, h: u32) -> ImageRef {
        ImageRef::from_dynamic(&DynamicImage::ImageRgb8(RgbImage::new(w, h))).unwrap()
    }

    fn sh(script: String) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script]
    }

    #[test]
    fn reads_mask_named_by_the_agent() {
        let dir = tempfile::tempdir().unwrap();
        let mask_path = dir.path().join("m.png");
        let expected = BinaryMask::from_fn(6, 3, |x, _| x >= 3);
        std::fs::write(&mask_path, expected.to_png().unwrap()).unwrap();
        let seg = SubprocessSegmenter::new(
            "lisa",
            sh(format!(
                "while read cmd img prompt; do test -f \"$img\" && echo \"MASK {}\" || echo \"ERROR no image\"; done",
                mask_path.display()
            )),
        )
        .unwrap();
        assert_eq!(seg.segment_text(&image(6, 3), "a prompt").unwrap(), expected);
        assert_eq!(seg.segment_text(&image(6, 3), "again").unwrap(), expected);
        assert!(!seg.descriptor().concurrency_safe);
    }

    #[test]
    fn agent_error_and_size_mismatch_are_backend_errors() {
        let seg = SubprocessSegmenter::new(
            "lisa",
            sh("while read line; do echo 'ERROR CUDA out of memory'; done".into()),
        )
        .unwrap();
        let err = seg.segment_text(&image(4, 4), "p").unwrap_err();
        assert!(err.to_string().contains("CUDA out of memory"));

        let dir = tempfile::tempdir().unwrap();
        let mask_path = dir.path().join("m.png");
        std::fs::write(&mask_path, BinaryMask::empty(2, 2).to_png().unwrap()).unwrap();
        let seg = SubprocessSegmenter::new(
            "lisa",
            sh(format!("while read line; do echo 'MASK {}'; done", mask_path.display())),
        )
        .unwrap();
        assert!(matches!(
            seg.segment_text(&image(4, 4), "p"),
            Err(Error::Backend { .. })
        ));
    }

    #[test]
    fn dead_process_is_reported_and_restarted() {
        let seg = SubprocessSegmenter::new("lisa", sh("read line; exit 0".into())).unwrap();
        assert!(matches!(
            seg.segment_text(&image(2, 2), "p"),
            Err(Error::Backend { .. })
        ));
        // restarted on the next call, fails the same way rather than hanging
        assert!(seg.segment_text(&image(2, 2), "p").is_err());
    }

    #[test]
    fn missing_program_is_backend_error() {
        let seg = SubprocessSegmenter::new("lisa", vec!["/no/such/binary".into()]).unwrap();
        assert!(matches!(
            seg.segment_text(&image(2, 2), "p"),
            Err(Error::Backend { .. })
        ));
    }
}
