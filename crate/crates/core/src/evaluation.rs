//! Average precision and relative mAP of a candidate stream scored against
//! teacher labels treated as ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matching::{match_detections, MatchConfig};
use crate::scoring::check_same_frames;
use crate::types::{align_class_tables, DetectionStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_cut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmap: f64,
    #[serde(rename = "per_class")]
    pub per_class_ap: BTreeMap<String, f64>,
    pub config: MatchConfig,
}

#[derive(Debug, Clone, Copy)]
struct RankedCandidate {
    score: f64,
    frame_index: u64,
    det_index: usize,
    class_id: usize,
    true_positive: bool,
}

struct Tally {
    candidates: Vec<RankedCandidate>,
    ground_truth: Vec<usize>,
}

/// Matches every frame once. Matching is always class-aware here: a class's
/// AP only ever compares that class's candidates against that class's labels.
fn tally(
    candidate: &DetectionStream,
    labels: &DetectionStream,
    classes: usize,
    cfg: &MatchConfig,
    exec: Execution,
) -> Tally {
    let cfg = MatchConfig { class_aware: true, ..*cfg };
    let per_frame = exec.map(&labels.frames, |t| {
        let c = candidate.frame(t.frame_index).expect("frame sets checked by caller");
        let result = match_detections(&t.detections, &c.detections, &cfg);
        let mut out: Vec<RankedCandidate> = Vec::with_capacity(result.pairs.len() + result.unmatched_student.len());
        let tp = result.pairs.iter().map(|&(s, _, _)| (s, true));
        let fp = result.unmatched_student.iter().map(|&s| (s, false));
        for (s, true_positive) in tp.chain(fp) {
            let d = &c.detections[s];
            out.push(RankedCandidate {
                score: d.score,
                frame_index: t.frame_index,
                det_index: s,
                class_id: d.class_id,
                true_positive,
            });
        }
        let mut gt = vec![0usize; classes];
        for d in t.detections.iter().filter(|d| d.score >= cfg.teacher_score_threshold) {
            gt[d.class_id] += 1;
        }
        (out, gt)
    });
    let mut ground_truth = vec![0usize; classes];
    let mut candidates = Vec::new();
    for (c, gt) in per_frame {
        candidates.extend(c);
        for (acc, g) in ground_truth.iter_mut().zip(gt) {
            *acc += g;
        }
    }
    Tally { candidates, ground_truth }
}

fn curve_for_class(tally: &Tally, class_id: usize) -> Vec<PrPoint> {
    let gt = tally.ground_truth[class_id];
    if gt == 0 {
        return Vec::new();
    }
    let mut ranked: Vec<&RankedCandidate> = tally.candidates.iter().filter(|c| c.class_id == class_id).collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.frame_index.cmp(&b.frame_index))
            .then(a.det_index.cmp(&b.det_index))
    });
    let mut tp = 0usize;
    ranked
        .iter()
        .enumerate()
        .map(|(k, c)| {
            tp += usize::from(c.true_positive);
            PrPoint { recall: tp as f64 / gt as f64, precision: tp as f64 / (k + 1) as f64, score_cut: c.score }
        })
        .collect()
}

/// Cumulative precision/recall over the class's candidates in descending
/// score order. Empty when the class has no ground truth.
pub fn pr_curve(
    candidate: &DetectionStream,
    labels: &DetectionStream,
    class_id: usize,
    cfg: &MatchConfig,
) -> Result<Vec<PrPoint>> {
    check_same_frames(labels, candidate)?;
    let aligned = align_class_tables(labels, candidate);
    if class_id >= aligned.class_table.len() {
        return Err(Error::usage(format!("class id {class_id} outside class table")));
    }
    let t = tally(&aligned.student, labels, aligned.class_table.len(), cfg, Execution::Sequential);
    Ok(curve_for_class(&t, class_id))
}

/// All-point interpolated area under the precision envelope.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut envelope = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for (i, p) in curve.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[i] = running;
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, env) in curve.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

pub fn relative_map(student: &DetectionStream, teacher: &DetectionStream, cfg: &MatchConfig) -> Result<EvalReport> {
    relative_map_with(student, teacher, cfg, Execution::default())
}

pub fn relative_map_with(
    student: &DetectionStream,
    teacher: &DetectionStream,
    cfg: &MatchConfig,
    exec: Execution,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_same_frames(teacher, student)?;
    let aligned = align_class_tables(teacher, student);
    let classes = aligned.class_table.len();
    let t = tally(&aligned.student, teacher, classes, cfg, exec);
    let with_gt: Vec<usize> = (0..classes).filter(|&c| t.ground_truth[c] > 0).collect();
    if with_gt.is_empty() {
        return Err(Error::usage("no class has ground-truth boxes above the teacher threshold; rmAP undefined"));
    }
    let aps = exec.map(&with_gt, |&c| average_precision(&curve_for_class(&t, c)));
    let rmap = 100.0 * aps.iter().sum::<f64>() / aps.len() as f64;
    let per_class_ap = with_gt.iter().zip(aps).map(|(&c, ap)| (aligned.class_table[c].clone(), ap)).collect();
    Ok(EvalReport { rmap, per_class_ap, config: *cfg })
}

pub fn write_report(report: &EvalReport) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("report serialization cannot fail");
    out.push(b'\n');
    out
}
