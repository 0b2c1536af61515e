//! Greedy score-ordered matching of student detections to teacher
//! detections within one frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, ConfusionCounts, Detection, FrameDetections, Violation};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TEACHER_SCORE_THRESHOLD: f64 = 0.7;
pub const DEFAULT_STUDENT_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub teacher_score_threshold: f64,
    pub student_score_threshold: f64,
    pub class_aware: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            teacher_score_threshold: DEFAULT_TEACHER_SCORE_THRESHOLD,
            student_score_threshold: DEFAULT_STUDENT_SCORE_THRESHOLD,
            class_aware: true,
        }
    }
}

impl MatchConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            out.push(Violation::stream("iou_threshold", format!("{} outside (0, 1]", self.iou_threshold)));
        }
        for (name, v) in [
            ("teacher_score_threshold", self.teacher_score_threshold),
            ("student_score_threshold", self.student_score_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::stream(name, format!("{v} outside [0, 1]")));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::usage(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(student index, teacher index, iou)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_student: Vec<usize>,
    pub unmatched_teacher: Vec<usize>,
}

/// Intersection over union; zero-area overlaps (touching edges) give 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Indices of detections scoring at least `threshold`, ordered by
/// descending score with ties on ascending index.
pub(crate) fn ranked_indices(dets: &[Detection], threshold: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= threshold).collect();
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    idx
}

/// Core greedy rule over raw detection slices.
pub(crate) fn match_detections(teacher: &[Detection], student: &[Detection], cfg: &MatchConfig) -> MatchResult {
    let eligible_teacher: Vec<usize> =
        (0..teacher.len()).filter(|&i| teacher[i].score >= cfg.teacher_score_threshold).collect();
    let mut taken = vec![false; teacher.len()];
    let mut result = MatchResult::default();

    for s in ranked_indices(student, cfg.student_score_threshold) {
        let sd = &student[s];
        let mut best: Option<(usize, f64)> = None;
        for &t in &eligible_teacher {
            if taken[t] || (cfg.class_aware && teacher[t].class_id != sd.class_id) {
                continue;
            }
            let v = iou(&sd.bbox, &teacher[t].bbox);
            if v >= cfg.iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        match best {
            Some((t, v)) => {
                taken[t] = true;
                result.pairs.push((s, t, v));
            }
            None => result.unmatched_student.push(s),
        }
    }
    result.unmatched_student.sort_unstable();
    result.unmatched_teacher = eligible_teacher.into_iter().filter(|&t| !taken[t]).collect();
    result
}

pub fn match_frame(teacher: &FrameDetections, student: &FrameDetections, cfg: &MatchConfig) -> Result<MatchResult> {
    if teacher.frame_index != student.frame_index {
        return Err(Error::usage(format!(
            "cannot match teacher frame {} against student frame {}",
            teacher.frame_index, student.frame_index
        )));
    }
    Ok(match_detections(&teacher.detections, &student.detections, cfg))
}

pub fn confusion_counts(result: &MatchResult) -> ConfusionCounts {
    ConfusionCounts::new(
        result.pairs.len() as u32,
        result.unmatched_student.len() as u32,
        result.unmatched_teacher.len() as u32,
    )
}
