//! Independent reference implementations and random fixtures shared by the
//! integration and acceptance targets. Nothing here calls the matching,
//! scoring or evaluation code under test.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use distilcull::{
    BoundingBox, ConfusionCounts, CuratedDataset, CuratedEntry, Detection, DetectionStream, FrameDetections, MatchConfig,
    Provenance, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn naive_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let [ax, ay, aw, ah] = a;
    let [bx, by, bw, bh] = b;
    let left = ax.max(bx);
    let right = (ax + aw).min(bx + bw);
    let top = ay.max(by);
    let bottom = (ay + ah).min(by + bh);
    let inter = if right > left && bottom > top { (right - left) * (bottom - top) } else { 0.0 };
    let union = aw * ah + bw * bh - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU by counting unit cells of an integer grid.
pub fn pixel_iou(a: [i64; 4], b: [i64; 4], grid: i64) -> f64 {
    let inside = |r: [i64; 4], px: i64, py: i64| px >= r[0] && px < r[0] + r[2] && py >= r[1] && py < r[1] + r[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for py in 0..grid {
        for px in 0..grid {
            let (ia, ib) = (inside(a, px, py), inside(b, px, py));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy score-ordered matching written out directly: returns
/// `(student, teacher)` pairs sorted, plus the confusion counts.
pub fn naive_match(teacher: &[Detection], student: &[Detection], cfg: &MatchConfig) -> (Vec<(usize, usize)>, ConfusionCounts) {
    let teacher_ok: Vec<bool> = teacher.iter().map(|d| d.score >= cfg.teacher_score_threshold).collect();
    let mut order: Vec<usize> = (0..student.len()).filter(|&i| student[i].score >= cfg.student_score_threshold).collect();
    // insertion sort: score descending, then index ascending
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (order[j - 1], order[j]);
            let swap = student[b].score > student[a].score || (student[b].score == student[a].score && b < a);
            if !swap {
                break;
            }
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used = vec![false; teacher.len()];
    let mut pairs = Vec::new();
    let mut fp = 0;
    for &s in &order {
        let mut best_t = usize::MAX;
        let mut best_v = -1.0;
        for t in 0..teacher.len() {
            if !teacher_ok[t] || used[t] {
                continue;
            }
            if cfg.class_aware && teacher[t].class_id != student[s].class_id {
                continue;
            }
            let v = naive_iou(student[s].bbox.as_array(), teacher[t].bbox.as_array());
            if v >= cfg.iou_threshold && v > best_v {
                best_v = v;
                best_t = t;
            }
        }
        if best_t == usize::MAX {
            fp += 1;
        } else {
            used[best_t] = true;
            pairs.push((s, best_t));
        }
    }
    let fn_ = (0..teacher.len()).filter(|&t| teacher_ok[t] && !used[t]).count();
    pairs.sort();
    let tp = pairs.len();
    (pairs, ConfusionCounts { tp: tp as u32, fp, fn_: fn_ as u32 })
}

pub fn naive_l_train(c: ConfusionCounts, eps: f64) -> f64 {
    let tp = c.tp as f64;
    (c.fp as f64 + tp) / (tp + eps) + (c.fn_ as f64 + tp) / (tp + eps)
}

/// Per-class AP computed as the mean, over ground-truth boxes, of the best
/// precision reached at or beyond the rank where each one is recalled.
pub fn naive_rmap(candidate: &DetectionStream, labels: &DetectionStream, cfg: &MatchConfig) -> f64 {
    let cfg = MatchConfig { class_aware: true, ..*cfg };
    let mut aps = Vec::new();
    for (class, name) in labels.class_table.iter().enumerate() {
        let cand_class = candidate.class_table.iter().position(|n| n == name);
        let mut gt_total = 0usize;
        // (score, frame_index, det_index, is_tp)
        let mut ranked: Vec<(f64, u64, usize, bool)> = Vec::new();
        for lf in &labels.frames {
            let cf = candidate.frames.iter().find(|f| f.frame_index == lf.frame_index).expect("frame sets agree");
            let gts: Vec<Detection> =
                lf.detections.iter().filter(|d| d.class_id == class).map(|d| Detection { class_id: 0, ..*d }).collect();
            gt_total += gts.iter().filter(|d| d.score >= cfg.teacher_score_threshold).count();
            let Some(cc) = cand_class else { continue };
            let dets: Vec<(usize, Detection)> = cf
                .detections
                .iter()
                .enumerate()
                .filter(|(_, d)| d.class_id == cc)
                .map(|(i, d)| (i, Detection { class_id: 0, ..*d }))
                .collect();
            let only: Vec<Detection> = dets.iter().map(|(_, d)| *d).collect();
            let (pairs, _) = naive_match(&gts, &only, &cfg);
            for (k, (i, d)) in dets.iter().enumerate() {
                if d.score >= cfg.student_score_threshold {
                    ranked.push((d.score, lf.frame_index, *i, pairs.iter().any(|&(s, _)| s == k)));
                }
            }
        }
        if gt_total == 0 {
            continue;
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let precisions: Vec<f64> = {
            let mut tp = 0;
            ranked
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    tp += usize::from(r.3);
                    tp as f64 / (k + 1) as f64
                })
                .collect()
        };
        let mut ap = 0.0;
        for (k, r) in ranked.iter().enumerate() {
            if r.3 {
                let best = precisions[k..].iter().cloned().fold(0.0, f64::max);
                ap += best / gt_total as f64;
            }
        }
        aps.push(ap);
    }
    100.0 * aps.iter().sum::<f64>() / aps.len() as f64
}

pub fn random_box(rng: &mut impl Rng, integer: bool, extent: f64) -> BoundingBox {
    if integer {
        let span = extent as i64;
        let x = rng.random_range(0..span - 1);
        let y = rng.random_range(0..span - 1);
        let w = rng.random_range(1..=span - x);
        let h = rng.random_range(1..=span - y);
        BoundingBox::new(x as f64, y as f64, w as f64, h as f64)
    } else {
        let x = rng.random_range(0.0..extent * 0.8);
        let y = rng.random_range(0.0..extent * 0.8);
        BoundingBox::new(x, y, rng.random_range(1.0..extent * 0.4), rng.random_range(1.0..extent * 0.4))
    }
}

/// Scores drawn from a coarse grid so ties occur often.
pub fn coarse_score(rng: &mut impl Rng) -> f64 {
    f64::from(rng.random_range(4..=10u32)) / 10.0
}

pub fn random_detections(rng: &mut impl Rng, max: usize, classes: usize, integer: bool, extent: f64) -> Vec<Detection> {
    let k = rng.random_range(0..=max);
    (0..k)
        .map(|_| {
            let score = if rng.random_bool(0.5) { coarse_score(rng) } else { rng.random_range(0.0..=1.0) };
            Detection::new(random_box(rng, integer, extent), rng.random_range(0..classes), score)
        })
        .collect()
}

pub fn class_table(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class_{c}")).collect()
}

pub fn random_stream(rng: &mut impl Rng, source: &str, frames: usize, classes: usize, max_dets: usize) -> DetectionStream {
    let mut s = DetectionStream::new(source, class_table(classes));
    let mut index = 0u64;
    for _ in 0..frames {
        index += rng.random_range(1..=3);
        let dets = random_detections(rng, max_dets, classes, false, 200.0);
        s.frames.push(FrameDetections::new(index, format!("img/{index:05}.jpg"), dets));
    }
    s
}

/// A candidate stream perturbed from `labels` over the same frames.
pub fn perturbed(rng: &mut impl Rng, labels: &DetectionStream, source: &str) -> DetectionStream {
    let mut out = DetectionStream::new(source, labels.class_table.clone());
    for f in &labels.frames {
        let mut dets = Vec::new();
        for d in &f.detections {
            if rng.random_bool(0.75) {
                let mut b = d.bbox;
                b.x += rng.random_range(-3.0..3.0);
                b.y += rng.random_range(-3.0..3.0);
                let class_id = if rng.random_bool(0.1) { rng.random_range(0..labels.class_table.len()) } else { d.class_id };
                dets.push(Detection::new(b, class_id, rng.random_range(0.3..=1.0)));
            }
        }
        dets.extend(random_detections(rng, 2, labels.class_table.len(), false, 200.0));
        out.frames.push(FrameDetections::new(f.frame_index, f.image_ref.clone(), dets));
    }
    out
}

pub fn random_dataset(rng: &mut impl Rng, entries: usize, classes: usize) -> CuratedDataset {
    let threshold = 0.7;
    let mut index = 0u64;
    let entries: Vec<CuratedEntry> = (0..entries)
        .map(|_| {
            index += rng.random_range(1..=5);
            let labels = random_detections(rng, 5, classes, false, 300.0)
                .into_iter()
                .map(|d| Detection { score: threshold + (1.0 - threshold) * d.score, ..d })
                .collect();
            CuratedEntry {
                frame_index: index,
                image_ref: format!("cam/{index}.png"),
                pseudo_labels: labels,
                l_train: rng.random_range(0.0..20.0),
            }
        })
        .collect();
    let n = entries.len() + rng.random_range(0..4);
    CuratedDataset {
        class_table: class_table(classes),
        entries,
        provenance: Provenance {
            teacher: "teacher-x".into(),
            strategy: if rng.random_bool(0.5) { Strategy::Dds } else { Strategy::Simple },
            n,
            teacher_score_threshold: threshold,
            student_score_threshold: 0.5,
            iou_threshold: 0.5,
            epsilon: 0.5,
        },
    }
}

/// Echo detector and no-op trainer scripts for adapter tests.
pub struct Scripts {
    pub dir: tempfile::TempDir,
}

impl Scripts {
    pub fn new() -> Self {
        Scripts { dir: tempfile::tempdir().unwrap() }
    }

    pub fn write(&self, name: &str, body: &str) -> PathBuf {
        use std::os::unix::fs::PermissionsExt;
        let path = self.dir.path().join(name);
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path
    }
}

pub fn adapter_json(program: &Path, args: &[&str], kind: &str) -> serde_json::Value {
    serde_json::json!({
        "name": program.file_name().unwrap().to_string_lossy(),
        "program": program,
        "args": args,
        "timeout_secs": 30.0,
        "kind": kind,
    })
}

pub fn strip_timings(report: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(report).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

pub fn per_class<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> BTreeMap<String, f64> {
    rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
