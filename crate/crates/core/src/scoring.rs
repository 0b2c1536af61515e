//! Per-frame teacher/student consistency scores, frame selection and
//! compilation of the curated training set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matching::{confusion_counts, match_detections, MatchConfig};
use crate::types::{
    align_class_tables, ConfusionCounts, CuratedDataset, CuratedEntry, DetectionStream, Provenance, Strategy,
};

pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub frame_index: u64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub l_train: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    #[serde(rename = "match")]
    pub match_config: MatchConfig,
    pub epsilon: f64,
    pub n: usize,
    pub strategy: Strategy,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { match_config: MatchConfig::default(), epsilon: DEFAULT_EPSILON, n: 256, strategy: Strategy::Dds }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        self.match_config.validate()?;
        check_epsilon(self.epsilon)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::usage(format!("epsilon must be > 0, got {epsilon}")))
    }
}

/// `(fp + tp) / (tp + ε) + (fn + tp) / (tp + ε)`.
pub fn l_train(counts: ConfusionCounts, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let tp = f64::from(counts.tp);
    let denom = tp + epsilon;
    Ok((f64::from(counts.fp) + tp) / denom + (f64::from(counts.fn_) + tp) / denom)
}

pub fn score_stream(teacher: &DetectionStream, student: &DetectionStream, cfg: &CurationConfig) -> Result<Vec<ScoredFrame>> {
    score_stream_with(teacher, student, cfg, Execution::default())
}

pub fn score_stream_with(
    teacher: &DetectionStream,
    student: &DetectionStream,
    cfg: &CurationConfig,
    exec: Execution,
) -> Result<Vec<ScoredFrame>> {
    cfg.validate()?;
    check_same_frames(teacher, student)?;
    let aligned = align_class_tables(teacher, student);
    let student = aligned.student.as_ref();
    let epsilon = cfg.epsilon;
    let match_config = cfg.match_config;
    exec.try_map(&teacher.frames, |t| {
        let s = student.frame(t.frame_index).expect("frame sets checked above");
        let counts = confusion_counts(&match_detections(&t.detections, &s.detections, &match_config));
        Ok(ScoredFrame { frame_index: t.frame_index, counts, l_train: l_train(counts, epsilon)? })
    })
}

pub(crate) fn check_same_frames(teacher: &DetectionStream, student: &DetectionStream) -> Result<()> {
    let t: BTreeSet<u64> = teacher.frames.iter().map(|f| f.frame_index).collect();
    let s: BTreeSet<u64> = student.frames.iter().map(|f| f.frame_index).collect();
    if t == s {
        return Ok(());
    }
    Err(Error::FrameMismatch {
        missing_in_student: t.difference(&s).copied().collect(),
        missing_in_teacher: s.difference(&t).copied().collect(),
    })
}

/// Frames holding the `n` largest scores, ties on ascending frame index,
/// returned in ascending frame order.
pub fn select_dds(scored: &[ScoredFrame], n: usize) -> Vec<u64> {
    let mut ranked: Vec<&ScoredFrame> = scored.iter().collect();
    ranked.sort_by(|a, b| b.l_train.total_cmp(&a.l_train).then(a.frame_index.cmp(&b.frame_index)));
    let mut picked: Vec<u64> = ranked.into_iter().take(n).map(|s| s.frame_index).collect();
    picked.sort_unstable();
    picked
}

pub fn select_simple(scored: &[ScoredFrame], n: usize) -> Vec<u64> {
    let mut all: Vec<u64> = scored.iter().map(|s| s.frame_index).collect();
    all.sort_unstable();
    all.truncate(n);
    all
}

pub fn select(strategy: Strategy, scored: &[ScoredFrame], n: usize) -> Vec<u64> {
    match strategy {
        Strategy::Simple => select_simple(scored, n),
        Strategy::Dds => select_dds(scored, n),
    }
}

pub fn compile_dataset(
    selection: &[u64],
    teacher: &DetectionStream,
    scored: &[ScoredFrame],
    cfg: &CurationConfig,
) -> Result<CuratedDataset> {
    let threshold = cfg.match_config.teacher_score_threshold;
    let mut indices = selection.to_vec();
    indices.sort_unstable();
    indices.dedup();
    let entries = indices
        .iter()
        .map(|&i| {
            let frame = teacher
                .frame(i)
                .ok_or_else(|| Error::usage(format!("selected frame {i} is not in the teacher stream")))?;
            let score = scored
                .iter()
                .find(|s| s.frame_index == i)
                .ok_or_else(|| Error::usage(format!("selected frame {i} has no score")))?;
            Ok(CuratedEntry {
                frame_index: i,
                image_ref: frame.image_ref.clone(),
                pseudo_labels: frame.detections.iter().filter(|d| d.score >= threshold).copied().collect(),
                l_train: score.l_train,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CuratedDataset {
        class_table: teacher.class_table.clone(),
        entries,
        provenance: Provenance {
            teacher: teacher.source_id.clone(),
            strategy: cfg.strategy,
            n: cfg.n,
            teacher_score_threshold: threshold,
            student_score_threshold: cfg.match_config.student_score_threshold,
            iou_threshold: cfg.match_config.iou_threshold,
            epsilon: cfg.epsilon,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BoundingBox, Detection, FrameDetections};

    fn c(tp: u32, fp: u32, fn_: u32) -> ConfusionCounts {
        ConfusionCounts::new(tp, fp, fn_)
    }

    #[test]
    fn direct_substitution() {
        assert_eq!(l_train(c(0, 0, 0), 0.5).unwrap(), 0.0);
        assert!((l_train(c(1, 0, 0), 0.5).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(l_train(c(0, 2, 1), 0.5).unwrap(), 6.0);
        assert!((l_train(c(2, 1, 3), 0.5).unwrap() - 3.2).abs() < 1e-12);
        assert!(l_train(c(0, 0, 0), 0.0).is_err());
        assert!(l_train(c(0, 0, 0), -1.0).is_err());
    }

    #[test]
    fn perfect_agreement_approaches_two() {
        let mut prev = 0.0;
        for tp in 1..200 {
            let v = l_train(c(tp, 0, 0), 0.5).unwrap();
            assert!(v > prev && v < 2.0);
            prev = v;
        }
    }

    fn scored(values: &[f64]) -> Vec<ScoredFrame> {
        values
            .iter()
            .enumerate()
            .map(|(i, &l)| ScoredFrame { frame_index: i as u64, counts: c(0, 0, 0), l_train: l })
            .collect()
    }

    #[test]
    fn dds_selection() {
        assert_eq!(select_dds(&scored(&[1.33, 6.0, 0.0]), 2), vec![0, 1]);
        assert_eq!(select_dds(&scored(&[2.0; 6]), 3), vec![0, 1, 2]);
        assert!(select_dds(&scored(&[1.0, 2.0]), 0).is_empty());
        assert_eq!(select_dds(&scored(&[1.0, 2.0]), 10), vec![0, 1]);
    }

    #[test]
    fn simple_selection() {
        let s = scored(&[0.0; 10]);
        assert_eq!(select_simple(&s, 4), vec![0, 1, 2, 3]);
        assert_eq!(select_simple(&s, 40).len(), 10);
        assert!(select_simple(&s, 0).is_empty());
    }

    fn box_det(x: f64, score: f64) -> Detection {
        Detection::new(BoundingBox::new(x, 0.0, 10.0, 10.0), 0, score)
    }

    fn stream(name: &str, frames: Vec<Vec<Detection>>) -> DetectionStream {
        DetectionStream {
            source_id: name.into(),
            class_table: vec!["car".into()],
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, d)| FrameDetections::new(i as u64, format!("{i}.jpg"), d))
                .collect(),
        }
    }

    #[test]
    fn identical_streams_score_two_tp_over_tp_plus_eps() {
        let frames = vec![vec![box_det(0.0, 0.9)], vec![box_det(0.0, 0.9), box_det(30.0, 0.8)], vec![]];
        let t = stream("t", frames.clone());
        let out = score_stream(&t, &stream("s", frames), &CurationConfig::default()).unwrap();
        for (f, tp) in out.iter().zip([1u32, 2, 0]) {
            assert_eq!(f.counts, c(tp, 0, 0));
            assert_eq!(f.l_train, 2.0 * f64::from(tp) / (f64::from(tp) + 0.5));
        }
    }

    #[test]
    fn blind_student_scores_k_over_eps() {
        let t = stream("t", vec![vec![box_det(0.0, 0.9), box_det(30.0, 0.9), box_det(60.0, 0.9)]; 4]);
        let s = stream("s", vec![vec![]; 4]);
        for f in score_stream(&t, &s, &CurationConfig::default()).unwrap() {
            assert_eq!(f.counts, c(0, 0, 3));
            assert_eq!(f.l_train, 6.0);
        }
    }

    #[test]
    fn differing_frame_sets_are_reported() {
        let t = stream("t", vec![vec![]; 3]);
        let mut s = stream("s", vec![vec![]; 2]);
        s.frames.push(FrameDetections::new(7, "x", vec![]));
        match score_stream(&t, &s, &CurationConfig::default()) {
            Err(Error::FrameMismatch { missing_in_student, missing_in_teacher }) => {
                assert_eq!(missing_in_student, vec![2]);
                assert_eq!(missing_in_teacher, vec![7]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compile_keeps_only_confident_labels() {
        let mut frames = vec![vec![]; 4];
        frames[3] = vec![box_det(0.0, 0.95), box_det(40.0, 0.4)];
        let t = stream("res101", frames);
        let sc = scored(&[0.0, 0.0, 0.0, 6.0]);
        let cfg = CurationConfig { n: 1, ..Default::default() };
        let d = compile_dataset(&[3], &t, &sc, &cfg).unwrap();
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.entries[0].pseudo_labels, vec![box_det(0.0, 0.95)]);
        assert_eq!(d.entries[0].l_train, 6.0);
        assert_eq!(d.provenance.teacher, "res101");
        assert_eq!(d.provenance.n, 1);

        let empty = compile_dataset(&[], &t, &sc, &cfg).unwrap();
        assert!(empty.entries.is_empty());
        assert!(matches!(compile_dataset(&[9], &t, &sc, &cfg), Err(Error::Usage(m)) if m.contains('9')));
    }
}
