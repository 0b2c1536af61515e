//! Stand-in for training the student on a curated dataset.
//!
//! The learning signal is the number of hard scene objects that a dataset
//! entry labels but the current student misses. Frames the student already
//! reproduces add nothing. Every profile field moves from its current value
//! toward its ceiling by the fraction
//!
//! ```text
//! progress(s) = (1 - exp(-s / tau)) / (1 - exp(-S / tau)),  tau = saturation_fraction * S
//! ```
//!
//! where `S` is the number of hard objects the student misses over the whole
//! domain. Training on every frame (with a teacher that labels every hard
//! object) therefore reaches the ceiling exactly.

use serde::{Deserialize, Serialize};

use super::detector::{simulate_frame, DetectorProfile};
use super::domain::{SceneFrame, SyntheticDomain};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matching::{iou, MatchConfig};
use crate::types::{CuratedDataset, Detection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub recall_easy_ceiling: f64,
    pub recall_hard_ceiling: f64,
    pub fp_rate_floor: f64,
    pub localization_noise_floor: f64,
    /// Saturation scale as a fraction of the domain's total signal.
    pub saturation_fraction: f64,
    /// Criterion deciding which scene objects a box reproduces.
    #[serde(rename = "match")]
    pub match_config: MatchConfig,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            recall_easy_ceiling: 0.98,
            recall_hard_ceiling: 0.9,
            fp_rate_floor: 0.05,
            localization_noise_floor: 1.0,
            saturation_fraction: 0.25,
            match_config: MatchConfig::default(),
        }
    }
}

impl TrainingParams {
    pub fn validate(&self) -> Result<()> {
        self.match_config.validate()?;
        let ok = (0.0..=1.0).contains(&self.recall_easy_ceiling)
            && (0.0..=1.0).contains(&self.recall_hard_ceiling)
            && self.fp_rate_floor >= 0.0
            && self.localization_noise_floor >= 0.0
            && self.saturation_fraction > 0.0
            && self.saturation_fraction.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!("invalid training parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSignal {
    /// Hard objects labeled in the dataset that the student missed.
    pub covered_hard: usize,
    /// Hard objects the student misses anywhere in the domain.
    pub missable_hard: usize,
    pub progress: f64,
}

fn reproduces(dets: &[Detection], object: &super::domain::SceneObject, cfg: &MatchConfig, threshold: f64) -> bool {
    dets.iter().any(|d| {
        d.score >= threshold
            && (!cfg.class_aware || d.class_id == object.class_id)
            && iou(&d.bbox, &object.bbox) >= cfg.iou_threshold
    })
}

fn missed_hard<'a>(
    frame: &'a SceneFrame,
    domain: &SyntheticDomain,
    student: &DetectorProfile,
    seed: u64,
    cfg: &MatchConfig,
) -> impl Iterator<Item = &'a super::domain::SceneObject> {
    let (dets, _) = simulate_frame(frame, domain, student, seed);
    let threshold = cfg.student_score_threshold;
    let cfg = *cfg;
    frame
        .objects
        .iter()
        .filter(move |o| o.is_hard() && !reproduces(&dets.detections, o, &cfg, threshold))
}

/// Learning signal of `dataset` for the student snapshot `(profile, seed)`.
pub fn training_signal(
    profile: &DetectorProfile,
    dataset: &CuratedDataset,
    domain: &SyntheticDomain,
    params: &TrainingParams,
    seed: u64,
    exec: Execution,
) -> Result<TrainingSignal> {
    params.validate()?;
    profile.validate()?;
    let cfg = params.match_config;
    let frames = dataset
        .entries
        .iter()
        .map(|e| {
            domain
                .frame(e.frame_index)
                .map(|f| (f, e))
                .ok_or_else(|| Error::usage(format!("dataset frame {} is not part of the training domain", e.frame_index)))
        })
        .collect::<Result<Vec<_>>>()?;

    // Labels come from the teacher and have passed its threshold already.
    let label_cfg = MatchConfig { student_score_threshold: 0.0, ..cfg };
    let covered_hard: usize = exec
        .map(&frames, |(frame, entry)| {
            missed_hard(frame, domain, profile, seed, &cfg)
                .filter(|o| reproduces(&entry.pseudo_labels, o, &label_cfg, 0.0))
                .count()
        })
        .into_iter()
        .sum();
    let missable_hard: usize = exec
        .map(&domain.frames, |frame| missed_hard(frame, domain, profile, seed, &cfg).count())
        .into_iter()
        .sum();

    let progress = if missable_hard == 0 || covered_hard == 0 {
        0.0
    } else {
        let total = missable_hard as f64;
        let tau = params.saturation_fraction * total;
        ((1.0 - (-(covered_hard as f64) / tau).exp()) / (1.0 - (-total / tau).exp())).min(1.0)
    };
    Ok(TrainingSignal { covered_hard, missable_hard, progress })
}

pub fn simulate_training(
    profile: &DetectorProfile,
    dataset: &CuratedDataset,
    domain: &SyntheticDomain,
    params: &TrainingParams,
    seed: u64,
) -> Result<DetectorProfile> {
    let signal = training_signal(profile, dataset, domain, params, seed, Execution::default())?;
    Ok(apply_progress(profile, params, signal.progress))
}

pub fn apply_progress(profile: &DetectorProfile, params: &TrainingParams, progress: f64) -> DetectorProfile {
    let toward = |current: f64, target: f64, improves: bool| {
        // never regress when the student already beats the target
        if improves {
            current + (target - current) * progress
        } else {
            current
        }
    };
    DetectorProfile {
        recall_easy: toward(profile.recall_easy, params.recall_easy_ceiling, params.recall_easy_ceiling > profile.recall_easy),
        recall_hard: toward(profile.recall_hard, params.recall_hard_ceiling, params.recall_hard_ceiling > profile.recall_hard),
        fp_rate: toward(profile.fp_rate, params.fp_rate_floor, params.fp_rate_floor < profile.fp_rate),
        localization_noise: toward(
            profile.localization_noise,
            params.localization_noise_floor,
            params.localization_noise_floor < profile.localization_noise,
        ),
        ..profile.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{compile_dataset, score_stream, select_dds, select_simple, CurationConfig};
    use crate::simulation::detector::simulate_detector;
    use crate::simulation::domain::{generate_domain, DomainParams};
    use crate::types::DetectionStream;

    struct Fixture {
        domain: SyntheticDomain,
        teacher: DetectionStream,
        scored: Vec<crate::scoring::ScoredFrame>,
        student: DetectorProfile,
        student_seed: u64,
    }

    fn fixture(seed: u64) -> Fixture {
        let domain = generate_domain(seed, &DomainParams { num_frames: 600, ..Default::default() }).unwrap();
        let student = DetectorProfile::pretrained_student();
        let teacher = simulate_detector(&domain, &DetectorProfile::teacher(), seed + 1).unwrap();
        let s = simulate_detector(&domain, &student, seed + 2).unwrap();
        let scored = score_stream(&teacher, &s, &CurationConfig::default()).unwrap();
        Fixture { domain, teacher, scored, student, student_seed: seed + 2 }
    }

    fn train(fx: &Fixture, selection: &[u64]) -> DetectorProfile {
        let cfg = CurationConfig { n: selection.len(), ..Default::default() };
        let ds = compile_dataset(selection, &fx.teacher, &fx.scored, &cfg).unwrap();
        simulate_training(&fx.student, &ds, &fx.domain, &TrainingParams::default(), fx.student_seed).unwrap()
    }

    #[test]
    fn empty_dataset_leaves_profile_unchanged() {
        let fx = fixture(3);
        assert_eq!(train(&fx, &[]), fx.student);
    }

    #[test]
    fn full_dataset_reaches_ceiling() {
        let fx = fixture(3);
        let all: Vec<u64> = (0..600).collect();
        let p = train(&fx, &all);
        let c = TrainingParams::default();
        assert!((p.recall_hard - c.recall_hard_ceiling).abs() < 1e-12);
        assert!((p.recall_easy - c.recall_easy_ceiling).abs() < 1e-12);
        assert!((p.fp_rate - c.fp_rate_floor).abs() < 1e-12);
        assert!((p.localization_noise - c.localization_noise_floor).abs() < 1e-12);
    }

    #[test]
    fn adding_entries_never_lowers_recall() {
        let fx = fixture(4);
        let mut prev = fx.student.clone();
        for n in [10, 50, 100, 200, 400] {
            let p = train(&fx, &select_dds(&fx.scored, n));
            assert!(p.recall_hard >= prev.recall_hard && p.recall_easy >= prev.recall_easy);
            assert!(p.fp_rate <= prev.fp_rate);
            prev = p;
        }
    }

    #[test]
    fn dds_covers_more_than_simple() {
        let fx = fixture(9);
        let dds = train(&fx, &select_dds(&fx.scored, 64));
        let simple = train(&fx, &select_simple(&fx.scored, 64));
        assert!(dds.recall_hard > simple.recall_hard);
    }

    #[test]
    fn entries_outside_domain_rejected() {
        let fx = fixture(3);
        let (train_half, _) = fx.domain.split_at(300);
        let cfg = CurationConfig { n: 1, ..Default::default() };
        let ds = compile_dataset(&[450], &fx.teacher, &fx.scored, &cfg).unwrap();
        assert!(simulate_training(&fx.student, &ds, &train_half, &TrainingParams::default(), 1).is_err());
    }
}
