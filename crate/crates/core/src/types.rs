//! Shared domain vocabulary: boxes, detections, streams, confusion counts
//! and the curated dataset. Values are plain data; [`validate_stream`] and
//! [`validate_dataset`] report every broken invariant instead of aborting.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixels, `[x, y, w, h]` with a top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.w > 0.0 && self.h > 0.0
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    /// Index into the owning stream's class table.
    pub class_id: usize,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class_id: usize, score: f64) -> Self {
        Self { bbox, class_id, score }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub image_ref: String,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn new(frame_index: u64, image_ref: impl Into<String>, detections: Vec<Detection>) -> Self {
        Self { frame_index, image_ref: image_ref.into(), detections }
    }
}

/// All predictions of one model over one domain, ordered by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStream {
    pub source_id: String,
    pub class_table: Vec<String>,
    pub frames: Vec<FrameDetections>,
}

impl DetectionStream {
    pub fn new(source_id: impl Into<String>, class_table: Vec<String>) -> Self {
        Self { source_id: source_id.into(), class_table, frames: Vec::new() }
    }

    pub fn frame(&self, frame_index: u64) -> Option<&FrameDetections> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_table.iter().position(|c| c == name)
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }

    /// Frames with `lo <= frame_index < hi`.
    pub fn slice_frames(&self, lo: u64, hi: u64) -> DetectionStream {
        DetectionStream {
            source_id: self.source_id.clone(),
            class_table: self.class_table.clone(),
            frames: self
                .frames
                .iter()
                .filter(|f| f.frame_index >= lo && f.frame_index < hi)
                .cloned()
                .collect(),
        }
    }

    /// Copy keeping only detections with `score >= threshold`.
    pub fn thresholded(&self, threshold: f64) -> DetectionStream {
        let mut out = self.clone();
        for frame in &mut out.frames {
            frame.detections.retain(|d| d.score >= threshold);
        }
        out
    }
}

/// Per-frame teacher/student agreement counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl ConfusionCounts {
    pub const fn new(tp: u32, fp: u32, fn_: u32) -> Self {
        Self { tp, fp, fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// First `n` frames in stream order.
    Simple,
    /// The `n` frames with the largest consistency score.
    Dds,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Simple => "simple",
            Strategy::Dds => "dds",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Strategy::Simple),
            "dds" => Ok(Strategy::Dds),
            other => Err(format!("unknown strategy {other:?} (expected dds or simple)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub teacher: String,
    pub strategy: Strategy,
    pub n: usize,
    pub teacher_score_threshold: f64,
    pub student_score_threshold: f64,
    pub iou_threshold: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuratedEntry {
    pub frame_index: u64,
    pub image_ref: String,
    pub pseudo_labels: Vec<Detection>,
    pub l_train: f64,
}

/// The compiled training set: selected frames with teacher pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedDataset {
    pub class_table: Vec<String>,
    pub entries: Vec<CuratedEntry>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame_index: Option<u64>,
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn frame(frame_index: u64, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { frame_index: Some(frame_index), field: field.into(), message: message.into() }
    }

    pub fn stream(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { frame_index: None, field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame_index {
            Some(i) => write!(f, "frame {i}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn check_detection(frame_index: u64, idx: usize, d: &Detection, classes: usize, out: &mut Vec<Violation>) {
    let b = &d.bbox;
    if !b.is_finite() {
        out.push(Violation::frame(frame_index, "bbox", format!("detection {idx}: non-finite coordinate")));
    } else {
        if b.w <= 0.0 {
            out.push(Violation::frame(frame_index, "w", format!("detection {idx}: w > 0 violated ({})", b.w)));
        }
        if b.h <= 0.0 {
            out.push(Violation::frame(frame_index, "h", format!("detection {idx}: h > 0 violated ({})", b.h)));
        }
    }
    if !(0.0..=1.0).contains(&d.score) {
        out.push(Violation::frame(
            frame_index,
            "score",
            format!("detection {idx}: {} outside [0, 1]", d.score),
        ));
    }
    if d.class_id >= classes {
        out.push(Violation::frame(
            frame_index,
            "class_id",
            format!("detection {idx}: {} not in class table of {classes}", d.class_id),
        ));
    }
}

fn check_class_table(table: &[String], out: &mut Vec<Violation>) {
    let mut seen = HashMap::new();
    for (i, name) in table.iter().enumerate() {
        if let Some(first) = seen.insert(name.as_str(), i) {
            out.push(Violation::stream(
                "class_table",
                format!("duplicate class {name:?} at positions {first} and {i}"),
            ));
        }
    }
}

/// Every invariant violation in `stream`; empty when the stream is valid.
pub fn validate_stream(stream: &DetectionStream) -> Vec<Violation> {
    let mut out = Vec::new();
    check_class_table(&stream.class_table, &mut out);
    let classes = stream.class_table.len();
    let mut prev: Option<u64> = None;
    for frame in &stream.frames {
        if let Some(p) = prev {
            if frame.frame_index == p {
                out.push(Violation::frame(frame.frame_index, "frame_index", "duplicate frame_index"));
            } else if frame.frame_index < p {
                out.push(Violation::frame(
                    frame.frame_index,
                    "frame_index",
                    format!("ordering: follows frame {p}"),
                ));
            }
        }
        prev = Some(frame.frame_index);
        for (i, d) in frame.detections.iter().enumerate() {
            check_detection(frame.frame_index, i, d, classes, &mut out);
        }
    }
    out
}

pub fn validate_dataset(dataset: &CuratedDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    check_class_table(&dataset.class_table, &mut out);
    let p = &dataset.provenance;
    if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
        out.push(Violation::stream("provenance.epsilon", format!("{} must be > 0", p.epsilon)));
    }
    if !(p.iou_threshold > 0.0 && p.iou_threshold <= 1.0) {
        out.push(Violation::stream("provenance.iou_threshold", format!("{} outside (0, 1]", p.iou_threshold)));
    }
    for (name, v) in [
        ("provenance.teacher_score_threshold", p.teacher_score_threshold),
        ("provenance.student_score_threshold", p.student_score_threshold),
    ] {
        if !(0.0..=1.0).contains(&v) {
            out.push(Violation::stream(name, format!("{v} outside [0, 1]")));
        }
    }
    if dataset.entries.len() > p.n {
        out.push(Violation::stream(
            "entries",
            format!("{} entries exceed provenance n = {}", dataset.entries.len(), p.n),
        ));
    }
    let classes = dataset.class_table.len();
    let mut prev: Option<u64> = None;
    for e in &dataset.entries {
        if let Some(prev) = prev {
            if e.frame_index <= prev {
                out.push(Violation::frame(e.frame_index, "frame_index", format!("ordering: follows frame {prev}")));
            }
        }
        prev = Some(e.frame_index);
        if !(e.l_train >= 0.0 && e.l_train.is_finite()) {
            out.push(Violation::frame(e.frame_index, "l_train", format!("{} is not a finite non-negative value", e.l_train)));
        }
        for (i, d) in e.pseudo_labels.iter().enumerate() {
            check_detection(e.frame_index, i, d, classes, &mut out);
            if d.score < p.teacher_score_threshold {
                out.push(Violation::frame(
                    e.frame_index,
                    "score",
                    format!("label {i}: {} below teacher threshold {}", d.score, p.teacher_score_threshold),
                ));
            }
        }
    }
    out
}

/// Teacher and student streams expressed over one shared class table.
///
/// The shared table is the teacher's table followed by student-only names;
/// teacher class ids are untouched and student ids are remapped by name.
#[derive(Debug)]
pub struct AlignedStreams<'a> {
    pub class_table: Vec<String>,
    pub teacher: &'a DetectionStream,
    pub student: Cow<'a, DetectionStream>,
}

pub fn align_class_tables<'a>(teacher: &'a DetectionStream, student: &'a DetectionStream) -> AlignedStreams<'a> {
    if teacher.class_table == student.class_table {
        return AlignedStreams {
            class_table: teacher.class_table.clone(),
            teacher,
            student: Cow::Borrowed(student),
        };
    }
    let mut table = teacher.class_table.clone();
    let remap: Vec<usize> = student
        .class_table
        .iter()
        .map(|name| match table.iter().position(|t| t == name) {
            Some(i) => i,
            None => {
                table.push(name.clone());
                table.len() - 1
            }
        })
        .collect();
    let mut remapped = student.clone();
    remapped.class_table = table.clone();
    for frame in &mut remapped.frames {
        for d in &mut frame.detections {
            d.class_id = remap[d.class_id];
        }
    }
    AlignedStreams { class_table: table, teacher, student: Cow::Owned(remapped) }
}
