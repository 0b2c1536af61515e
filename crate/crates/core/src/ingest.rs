//! JSON reading and writing for detection streams, curated-dataset
//! manifests and per-frame score files.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! correct rounding, so `parse(write(x)) == x` holds exactly.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchConfig;
use crate::scoring::{l_train, ScoredFrame};
use crate::types::{
    validate_dataset, validate_stream, BoundingBox, CuratedDataset, CuratedEntry, Detection, DetectionStream,
    FrameDetections, Provenance, Violation,
};

pub const SCHEMA_VERSION: &str = "distilcull/1";

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawDetection<'a> {
    #[serde(borrow)]
    class: std::borrow::Cow<'a, str>,
    score: f64,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct RawFrame<'a> {
    frame_index: u64,
    image_ref: String,
    #[serde(borrow)]
    detections: Vec<RawDetection<'a>>,
}

#[derive(Serialize, Deserialize)]
struct RawStream<'a> {
    schema_version: String,
    source_id: String,
    class_table: Vec<String>,
    #[serde(borrow)]
    frames: Vec<RawFrame<'a>>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry<'a> {
    frame_index: u64,
    image_ref: String,
    l_train: f64,
    #[serde(borrow)]
    labels: Vec<RawDetection<'a>>,
}

#[derive(Serialize, Deserialize)]
struct RawManifest<'a> {
    schema_version: String,
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_table: Option<Vec<String>>,
    #[serde(borrow)]
    entries: Vec<RawEntry<'a>>,
}

#[derive(Serialize, Deserialize)]
struct RawScores {
    schema_version: String,
    teacher: String,
    student: String,
    epsilon: f64,
    #[serde(rename = "match")]
    match_config: MatchConfig,
    frames: Vec<ScoredFrame>,
}

/// Per-frame scores with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoresDocument {
    pub teacher: String,
    pub student: String,
    pub epsilon: f64,
    pub match_config: MatchConfig,
    pub frames: Vec<ScoredFrame>,
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for _ in 1..line {
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => return bytes.len(),
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

pub(crate) fn parse_json<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })
}

fn check_version(bytes: &[u8], expected: &'static str) -> Result<()> {
    let probe: VersionProbe = parse_json(bytes)?;
    match probe.schema_version {
        Some(v) if v == expected => Ok(()),
        Some(found) => Err(Error::UnsupportedVersion { found, expected }),
        None => Err(Error::Validation(vec![Violation::stream("schema_version", "missing")])),
    }
}

fn to_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    out
}

struct ClassResolver {
    ids: HashMap<String, usize>,
}

impl ClassResolver {
    fn new(table: &[String]) -> Self {
        Self { ids: table.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect() }
    }

    fn convert(
        &self,
        frame_index: u64,
        raw: &[RawDetection<'_>],
        violations: &mut Vec<Violation>,
    ) -> Vec<Detection> {
        raw.iter()
            .enumerate()
            .filter_map(|(i, d)| match self.ids.get(d.class.as_ref()) {
                Some(&class_id) => Some(Detection::new(BoundingBox::from_array(d.bbox), class_id, d.score)),
                None => {
                    violations.push(Violation::frame(
                        frame_index,
                        "class",
                        format!("detection {i}: {:?} not in class_table", d.class),
                    ));
                    None
                }
            })
            .collect()
    }
}

fn raw_detections<'a>(table: &'a [String], dets: &[Detection]) -> Vec<RawDetection<'a>> {
    dets.iter()
        .map(|d| RawDetection {
            class: std::borrow::Cow::Borrowed(table[d.class_id].as_str()),
            score: d.score,
            bbox: d.bbox.as_array(),
        })
        .collect()
}

pub fn parse_stream(bytes: &[u8]) -> Result<DetectionStream> {
    check_version(bytes, SCHEMA_VERSION)?;
    let raw: RawStream<'_> = parse_json(bytes)?;
    let resolver = ClassResolver::new(&raw.class_table);
    let mut violations = Vec::new();
    let mut frames: Vec<FrameDetections> = raw
        .frames
        .into_iter()
        .map(|f| {
            let detections = resolver.convert(f.frame_index, &f.detections, &mut violations);
            FrameDetections { frame_index: f.frame_index, image_ref: f.image_ref, detections }
        })
        .collect();
    frames.sort_by_key(|f| f.frame_index);
    let stream = DetectionStream { source_id: raw.source_id, class_table: raw.class_table, frames };
    violations.extend(validate_stream(&stream));
    if violations.is_empty() {
        Ok(stream)
    } else {
        Err(Error::Validation(violations))
    }
}

pub fn write_stream(stream: &DetectionStream) -> Result<Vec<u8>> {
    let violations = validate_stream(stream);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let raw = RawStream {
        schema_version: SCHEMA_VERSION.to_string(),
        source_id: stream.source_id.clone(),
        class_table: stream.class_table.clone(),
        frames: stream
            .frames
            .iter()
            .map(|f| RawFrame {
                frame_index: f.frame_index,
                image_ref: f.image_ref.clone(),
                detections: raw_detections(&stream.class_table, &f.detections),
            })
            .collect(),
    };
    Ok(to_bytes(&raw))
}

pub fn parse_manifest(bytes: &[u8]) -> Result<CuratedDataset> {
    check_version(bytes, SCHEMA_VERSION)?;
    let raw: RawManifest<'_> = parse_json(bytes)?;
    let Some(provenance) = raw.provenance else {
        return Err(Error::Validation(vec![Violation::stream("provenance", "missing provenance block")]));
    };
    // Without an explicit table, classes are numbered by first appearance.
    let class_table = raw.class_table.unwrap_or_else(|| {
        let mut table: Vec<String> = Vec::new();
        for label in raw.entries.iter().flat_map(|e| &e.labels) {
            if !table.iter().any(|c| c == label.class.as_ref()) {
                table.push(label.class.to_string());
            }
        }
        table
    });
    let resolver = ClassResolver::new(&class_table);
    let mut violations = Vec::new();
    let entries = raw
        .entries
        .into_iter()
        .map(|e| CuratedEntry {
            pseudo_labels: resolver.convert(e.frame_index, &e.labels, &mut violations),
            frame_index: e.frame_index,
            image_ref: e.image_ref,
            l_train: e.l_train,
        })
        .collect();
    let dataset = CuratedDataset { class_table, entries, provenance };
    violations.extend(validate_dataset(&dataset));
    if violations.is_empty() {
        Ok(dataset)
    } else {
        Err(Error::Validation(violations))
    }
}

pub fn write_manifest(dataset: &CuratedDataset) -> Result<Vec<u8>> {
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let raw = RawManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        provenance: Some(dataset.provenance.clone()),
        class_table: Some(dataset.class_table.clone()),
        entries: dataset
            .entries
            .iter()
            .map(|e| RawEntry {
                frame_index: e.frame_index,
                image_ref: e.image_ref.clone(),
                l_train: e.l_train,
                labels: raw_detections(&dataset.class_table, &e.pseudo_labels),
            })
            .collect(),
    };
    Ok(to_bytes(&raw))
}

fn validate_scores(doc: &ScoresDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(doc.epsilon > 0.0 && doc.epsilon.is_finite()) {
        out.push(Violation::stream("epsilon", format!("{} must be > 0", doc.epsilon)));
    }
    out.extend(doc.match_config.violations());
    let mut prev = None;
    for f in &doc.frames {
        if prev.is_some_and(|p| f.frame_index <= p) {
            out.push(Violation::frame(f.frame_index, "frame_index", "frames must be strictly ascending"));
        }
        prev = Some(f.frame_index);
        if doc.epsilon > 0.0 {
            let expected = l_train(f.counts, doc.epsilon).unwrap_or(f64::NAN);
            if f.l_train != expected {
                out.push(Violation::frame(
                    f.frame_index,
                    "l_train",
                    format!("{} does not match counts (expected {expected})", f.l_train),
                ));
            }
        }
    }
    out
}

pub fn parse_scores(bytes: &[u8]) -> Result<ScoresDocument> {
    check_version(bytes, SCHEMA_VERSION)?;
    let raw: RawScores = parse_json(bytes)?;
    let doc = ScoresDocument {
        teacher: raw.teacher,
        student: raw.student,
        epsilon: raw.epsilon,
        match_config: raw.match_config,
        frames: raw.frames,
    };
    let violations = validate_scores(&doc);
    if violations.is_empty() {
        Ok(doc)
    } else {
        Err(Error::Validation(violations))
    }
}

pub fn write_scores(doc: &ScoresDocument) -> Result<Vec<u8>> {
    let violations = validate_scores(doc);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(to_bytes(&RawScores {
        schema_version: SCHEMA_VERSION.to_string(),
        teacher: doc.teacher.clone(),
        student: doc.student.clone(),
        epsilon: doc.epsilon,
        match_config: doc.match_config,
        frames: doc.frames.clone(),
    }))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_stream(path: &Path) -> Result<DetectionStream> {
    parse_stream(&read_file(path)?)
}

pub fn load_manifest(path: &Path) -> Result<CuratedDataset> {
    parse_manifest(&read_file(path)?)
}
