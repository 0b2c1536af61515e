//! Subprocess bridge to external detectors and trainers.
//!
//! An adapter is a command line whose arguments contain the placeholders
//! `{input}` and `{output}` exactly once each. A detector reads a
//! newline-delimited image list from `{input}` and writes a stream file to
//! `{output}` with one frame per input line (`frame_index` = line number).
//! A trainer reads a manifest from `{input}` and may write anything under
//! `{output}`. Exit status 0 means success; stdout and stderr go to a log
//! file next to the exchange files.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{load_manifest, load_stream, write_file};
use crate::types::{DetectionStream, Violation};

const INPUT: &str = "{input}";
const OUTPUT: &str = "{output}";
const POLL: Duration = Duration::from_millis(5);
const DIAGNOSTIC_TAIL: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Detect,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub name: String,
    pub program: String,
    pub args: Vec<String>,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    pub kind: AdapterKind,
}

fn default_timeout() -> f64 {
    3600.0
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<()> {
        for placeholder in [INPUT, OUTPUT] {
            let count: usize = self.args.iter().map(|a| a.matches(placeholder).count()).sum();
            if count != 1 {
                return Err(Error::usage(format!(
                    "adapter {:?}: argument template must contain {placeholder} exactly once (found {count})",
                    self.name
                )));
            }
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::usage(format!("adapter {:?}: timeout must be positive", self.name)));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: AdapterKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::usage(format!("adapter {:?} is {:?}, expected {kind:?}", self.name, self.kind)))
        }
    }

    fn command_args(&self, input: &Path, output: &Path) -> Vec<String> {
        let (input, output) = (input.to_string_lossy(), output.to_string_lossy());
        self.args.iter().map(|a| a.replace(INPUT, &input).replace(OUTPUT, &output)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub exit_status: i32,
    pub duration_secs: f64,
}

fn log_tail(path: &Path) -> String {
    let Ok(mut f) = File::open(path) else { return String::new() };
    let len = f.metadata().map(|m| m.len()).unwrap_or(0);
    let _ = f.seek(SeekFrom::Start(len.saturating_sub(DIAGNOSTIC_TAIL)));
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).trim().to_string()
}

/// Runs the adapter to completion and returns its wall-clock duration.
fn invoke(spec: &AdapterSpec, input: &Path, output: &Path, log: &Path) -> Result<Duration> {
    let log_file = File::create(log).map_err(|e| Error::io(log, e))?;
    let log_err = log_file.try_clone().map_err(|e| Error::io(log, e))?;
    let mut cmd = Command::new(&spec.program);
    cmd.args(spec.command_args(input, output))
        .stdin(Stdio::null())
        .stdout(Stdio::from(log_file))
        .stderr(Stdio::from(log_err));
    if let Some(dir) = &spec.working_dir {
        cmd.current_dir(dir);
    }
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| Error::AdapterFailed {
        adapter: spec.name.clone(),
        exit_code: None,
        diagnostics: format!("failed to start {:?}: {e}", spec.program),
    })?;
    let timeout = Duration::from_secs_f64(spec.timeout_secs);
    let status = loop {
        match child.try_wait().map_err(|e| Error::io(log, e))? {
            Some(status) => break status,
            None if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::AdapterTimeout { adapter: spec.name.clone(), timeout_secs: spec.timeout_secs });
            }
            None => std::thread::sleep(POLL),
        }
    };
    let elapsed = start.elapsed();
    if !status.success() {
        return Err(Error::AdapterFailed {
            adapter: spec.name.clone(),
            exit_code: status.code(),
            diagnostics: log_tail(log),
        });
    }
    Ok(elapsed)
}

fn check_alignment(stream: &DetectionStream, images: &[String]) -> Result<()> {
    if stream.frames.len() != images.len() {
        return Err(Error::Validation(vec![Violation::stream(
            "frames",
            format!("frame count mismatch: {} input images, {} output frames", images.len(), stream.frames.len()),
        )]));
    }
    let violations: Vec<Violation> = stream
        .frames
        .iter()
        .zip(images)
        .enumerate()
        .flat_map(|(line, (frame, image))| {
            let mut v = Vec::new();
            if frame.frame_index != line as u64 {
                v.push(Violation::frame(frame.frame_index, "frame_index", format!("expected line number {line}")));
            }
            if &frame.image_ref != image {
                v.push(Violation::frame(
                    frame.frame_index,
                    "image_ref",
                    format!("expected {image:?}, got {:?}", frame.image_ref),
                ));
            }
            v
        })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(violations))
    }
}

/// Runs a detector over `images`, exchanging files inside `run_dir`.
pub fn run_detect(spec: &AdapterSpec, images: &[String], run_dir: &Path) -> Result<DetectionStream> {
    spec.validate()?;
    spec.expect_kind(AdapterKind::Detect)?;
    if let Some(bad) = images.iter().find(|i| i.contains('\n') || i.contains('\r')) {
        return Err(Error::usage(format!("image_ref {bad:?} contains a line break")));
    }
    let input = run_dir.join("images.txt");
    let output = run_dir.join("detections.json");
    let log = run_dir.join("adapter.log");
    let mut list = String::with_capacity(images.iter().map(|i| i.len() + 1).sum());
    for image in images {
        list.push_str(image);
        list.push('\n');
    }
    write_file(&input, list.as_bytes())?;
    invoke(spec, &input, &output, &log)?;
    if !output.exists() {
        return Err(Error::AdapterFailed {
            adapter: spec.name.clone(),
            exit_code: Some(0),
            diagnostics: format!("no output written to {}", output.display()),
        });
    }
    let wrap = |e: Error| Error::AdapterOutput { adapter: spec.name.clone(), source: Box::new(e) };
    let stream = load_stream(&output).map_err(wrap)?;
    check_alignment(&stream, images).map_err(wrap)?;
    Ok(stream)
}

/// Runs a trainer on the manifest at `manifest`, exchanging files inside `run_dir`.
pub fn run_train(spec: &AdapterSpec, manifest: &Path, run_dir: &Path) -> Result<TrainReport> {
    spec.validate()?;
    spec.expect_kind(AdapterKind::Train)?;
    if !manifest.is_file() {
        return Err(Error::usage(format!("manifest {} does not exist", manifest.display())));
    }
    load_manifest(manifest)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let output = run_dir.join("train_output");
    let log = run_dir.join("adapter.log");
    let elapsed = invoke(spec, manifest, &output, &log)?;
    Ok(TrainReport { exit_status: 0, duration_secs: elapsed.as_secs_f64() })
}
