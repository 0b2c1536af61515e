use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::domain::{SceneFrame, SyntheticDomain};
use super::rng::{poisson_from_uniform, stream_rng, Purpose};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matching::iou;
use crate::types::{BoundingBox, Detection, DetectionStream, FrameDetections};

/// Jitter draws are clamped to this many standard deviations.
const JITTER_CLAMP: f64 = 2.0;
const SPURIOUS_ATTEMPTS: usize = 16;

/// Confidence emitted for correct and spurious detections: uniform on
/// `[low, high]`, with correct detections lowered by `difficulty_penalty`
/// times the object's difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub true_low: f64,
    pub true_high: f64,
    pub false_low: f64,
    pub false_high: f64,
    pub difficulty_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub name: String,
    pub recall_easy: f64,
    pub recall_hard: f64,
    /// Expected spurious boxes per frame.
    pub fp_rate: f64,
    /// Standard deviation of box jitter, pixels.
    pub localization_noise: f64,
    pub score_model: ScoreModel,
}

impl DetectorProfile {
    /// Large, accurate labeling model.
    pub fn teacher() -> Self {
        Self {
            name: "teacher".into(),
            recall_easy: 1.0,
            recall_hard: 1.0,
            fp_rate: 0.05,
            localization_noise: 1.0,
            score_model: ScoreModel {
                true_low: 0.8,
                true_high: 1.0,
                false_low: 0.7,
                false_high: 0.9,
                difficulty_penalty: 0.1,
            },
        }
    }

    /// Compact model pretrained on a general dataset, before domain training.
    pub fn pretrained_student() -> Self {
        Self {
            name: "student".into(),
            recall_easy: 0.85,
            recall_hard: 0.3,
            fp_rate: 0.5,
            localization_noise: 2.5,
            score_model: ScoreModel {
                true_low: 0.55,
                true_high: 1.0,
                false_low: 0.5,
                false_high: 0.85,
                difficulty_penalty: 0.1,
            },
        }
    }

    /// Detector that reproduces scene boxes exactly.
    pub fn perfect(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            recall_easy: 1.0,
            recall_hard: 1.0,
            fp_rate: 0.0,
            localization_noise: 0.0,
            score_model: ScoreModel {
                true_low: 1.0,
                true_high: 1.0,
                false_low: 0.5,
                false_high: 0.5,
                difficulty_penalty: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let s = &self.score_model;
        for (name, v) in [
            ("recall_easy", self.recall_easy),
            ("recall_hard", self.recall_hard),
            ("score_model.true_low", s.true_low),
            ("score_model.true_high", s.true_high),
            ("score_model.false_low", s.false_low),
            ("score_model.false_high", s.false_high),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("fp_rate", self.fp_rate),
            ("localization_noise", self.localization_noise),
            ("score_model.difficulty_penalty", s.difficulty_penalty),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} = {v} must be a finite value >= 0"));
            }
        }
        if s.true_low > s.true_high || s.false_low > s.false_high {
            problems.push("score ranges must have low <= high".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::usage(format!("invalid detector profile {:?}: {}", self.name, problems.join("; "))))
        }
    }
}

/// Counters kept while simulating, for checking empirical rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectorStats {
    pub easy_objects: usize,
    pub easy_detected: usize,
    pub hard_objects: usize,
    pub hard_detected: usize,
    pub spurious: usize,
}

impl DetectorStats {
    fn add(&mut self, other: &DetectorStats) {
        self.easy_objects += other.easy_objects;
        self.easy_detected += other.easy_detected;
        self.hard_objects += other.hard_objects;
        self.hard_detected += other.hard_detected;
        self.spurious += other.spurious;
    }
}

fn clamped_normal<R: Rng>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z.clamp(-JITTER_CLAMP, JITTER_CLAMP)
}

/// Simulates one frame. Every object consumes the same draws whatever the
/// profile, and spurious boxes come last, so two profiles run with one seed
/// are coupled: a higher recall detects a superset of objects and a lower
/// `fp_rate` emits a prefix of the same spurious boxes.
pub(crate) fn simulate_frame(
    frame: &SceneFrame,
    domain: &SyntheticDomain,
    profile: &DetectorProfile,
    seed: u64,
) -> (FrameDetections, DetectorStats) {
    let mut rng = stream_rng(seed, Purpose::Detector, frame.frame_index);
    let sm = &profile.score_model;
    let sigma = profile.localization_noise;
    let mut stats = DetectorStats::default();
    let mut detections = Vec::with_capacity(frame.objects.len() + 1);

    for object in &frame.objects {
        let u_detect: f64 = rng.random();
        let z = [clamped_normal(&mut rng), clamped_normal(&mut rng), clamped_normal(&mut rng), clamped_normal(&mut rng)];
        let u_score: f64 = rng.random();
        let (recall, objects, detected) = if object.is_hard() {
            (profile.recall_hard, &mut stats.hard_objects, &mut stats.hard_detected)
        } else {
            (profile.recall_easy, &mut stats.easy_objects, &mut stats.easy_detected)
        };
        *objects += 1;
        if u_detect >= recall {
            continue;
        }
        *detected += 1;
        let b = object.bbox;
        let bbox = BoundingBox::new(
            b.x + sigma * z[0],
            b.y + sigma * z[1],
            (b.w + sigma * z[2]).max(1.0),
            (b.h + sigma * z[3]).max(1.0),
        );
        let score = (sm.true_low + (sm.true_high - sm.true_low) * u_score - sm.difficulty_penalty * object.difficulty)
            .clamp(0.0, 1.0);
        detections.push(Detection::new(bbox, object.class_id, score));
    }

    let params = &domain.params;
    let count = poisson_from_uniform(profile.fp_rate, rng.random());
    for _ in 0..count {
        let class_id = rng.random_range(0..params.class_count);
        let u_score: f64 = rng.random();
        for _ in 0..SPURIOUS_ATTEMPTS {
            let w = rng.random_range(24.0..96.0);
            let h = rng.random_range(24.0..96.0);
            let bbox = BoundingBox::new(
                rng.random::<f64>() * (params.width - w),
                rng.random::<f64>() * (params.height - h),
                w,
                h,
            );
            if frame.objects.iter().all(|o| iou(&o.bbox, &bbox) == 0.0) {
                let score = sm.false_low + (sm.false_high - sm.false_low) * u_score;
                detections.push(Detection::new(bbox, class_id, score));
                stats.spurious += 1;
                break;
            }
        }
    }
    (FrameDetections::new(frame.frame_index, frame.image_ref.clone(), detections), stats)
}

pub fn simulate_detector(domain: &SyntheticDomain, profile: &DetectorProfile, seed: u64) -> Result<DetectionStream> {
    Ok(simulate_detector_with_stats(domain, profile, seed, Execution::default())?.0)
}

pub fn simulate_detector_with_stats(
    domain: &SyntheticDomain,
    profile: &DetectorProfile,
    seed: u64,
    exec: Execution,
) -> Result<(DetectionStream, DetectorStats)> {
    profile.validate()?;
    let per_frame = exec.map(&domain.frames, |f| simulate_frame(f, domain, profile, seed));
    let mut stats = DetectorStats::default();
    let mut frames = Vec::with_capacity(per_frame.len());
    for (frame, s) in per_frame {
        stats.add(&s);
        frames.push(frame);
    }
    let stream = DetectionStream { source_id: profile.name.clone(), class_table: domain.class_table(), frames };
    Ok((stream, stats))
}
