//! End-to-end curation loop: label, score, select, compile, train, evaluate.
//!
//! Frames are split in half by frame order; the first half is scored and
//! curated, the second half is only used for held-out evaluation. Every
//! intermediate is written to the output directory and listed with its
//! SHA-256 in the report. Training always consumes the manifest as read back
//! from disk.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{run_detect, run_train, AdapterSpec};
use crate::error::{Error, Result};
use crate::evaluation::{relative_map, write_report, EvalReport};
use crate::exec::Execution;
use crate::ingest::{read_file, write_file, write_manifest, write_scores, write_stream, parse_manifest, ScoresDocument};
use crate::matching::MatchConfig;
use crate::scoring::{compile_dataset, score_stream, select, CurationConfig, ScoredFrame};
use crate::simulation::{
    derive_training_seeds, generate_domain, simulate_detector, training_signal, apply_progress, write_profile,
    DetectorProfile, DomainParams, SyntheticDomain, TrainingParams,
};
use crate::types::{DetectionStream, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSource {
    pub seed: u64,
    #[serde(default)]
    pub domain: DomainParams,
    #[serde(default = "DetectorProfile::teacher")]
    pub teacher: DetectorProfile,
    #[serde(default = "DetectorProfile::pretrained_student")]
    pub student: DetectorProfile,
    #[serde(default)]
    pub training: TrainingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSource {
    pub teacher: AdapterSpec,
    pub student_detect: AdapterSpec,
    pub student_train: AdapterSpec,
    /// Newline-delimited image references.
    pub image_list: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulation(SimulationSource),
    Adapters(AdapterSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: Source,
    #[serde(default)]
    pub curation: CurationConfig,
    #[serde(default = "default_eval")]
    pub eval: MatchConfig,
    pub output_dir: PathBuf,
}

fn default_eval() -> MatchConfig {
    MatchConfig::default()
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::usage(format!("invalid pipeline config: {e}")))
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&read_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Source::Adapters(a) = &mut cfg.source {
            resolve(&mut a.image_list);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.curation.validate()?;
        self.eval.validate()?;
        match &self.source {
            Source::Simulation(s) => {
                s.domain.validate()?;
                s.teacher.validate()?;
                s.student.validate()?;
                s.training.validate()?;
                if s.domain.num_frames < 2 {
                    return Err(Error::usage("simulation needs at least 2 frames for the train/test split"));
                }
            }
            Source::Adapters(a) => {
                a.teacher.validate()?;
                a.student_detect.validate()?;
                a.student_train.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub scoring_secs: f64,
    pub train_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTraining {
    pub covered_hard_objects: usize,
    pub missable_hard_objects: usize,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub strategy: Strategy,
    pub n_requested: usize,
    pub n_used: usize,
    pub frames_total: usize,
    pub frames_culled_fraction: f64,
    pub rmap_before: f64,
    pub rmap_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated_training: Option<SimulatedTraining>,
    pub artifacts: Vec<Artifact>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(flatten)]
    pub report: PipelineReport,
    /// Full-training rmAP minus this row's rmAP.
    pub accuracy_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub frames_total: usize,
    pub rmap_before: f64,
    pub full_training: PipelineReport,
    pub rows: Vec<SweepRow>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Outputs<'a> {
    root: &'a Path,
}

impl Outputs<'_> {
    fn persist(&self, rel: &str, role: &str, bytes: &[u8]) -> Result<Artifact> {
        write_file(&self.root.join(rel), bytes)?;
        Ok(Artifact { role: role.into(), path: rel.into(), sha256: sha256_hex(bytes) })
    }
}

enum Backend<'a> {
    Simulation {
        src: &'a SimulationSource,
        train_domain: Box<SyntheticDomain>,
        test_domain: Box<SyntheticDomain>,
        student_seed: u64,
    },
    Adapters {
        src: &'a AdapterSource,
        test_images: Vec<String>,
        test_offset: u64,
    },
}

/// State shared by every variant of one run: both snapshots, the scores and
/// the pre-training evaluation.
struct Prepared<'a> {
    cfg: &'a PipelineConfig,
    backend: Backend<'a>,
    train_teacher: DetectionStream,
    test_teacher: DetectionStream,
    scored: Vec<ScoredFrame>,
    rmap_before: f64,
    scoring_secs: f64,
    shared: Vec<Artifact>,
}

fn read_image_list(path: &Path) -> Result<Vec<String>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::usage(format!("image list {} is not UTF-8", path.display())))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn split_point(stream: &DetectionStream) -> u64 {
    let k = stream.frames.len() / 2;
    stream.frames.get(k).map_or(u64::MAX, |f| f.frame_index)
}

fn prepare(cfg: &PipelineConfig) -> Result<Prepared<'_>> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let out = Outputs { root: &cfg.output_dir };
    let mut shared = Vec::new();

    let (teacher, student, backend) = match &cfg.source {
        Source::Simulation(src) => {
            let domain = generate_domain(src.seed, &src.domain).map_err(|e| e.in_stage("domain"))?;
            let (teacher_seed, student_seed) = derive_training_seeds(src.seed);
            let teacher = simulate_detector(&domain, &src.teacher, teacher_seed).map_err(|e| e.in_stage("teacher"))?;
            let student = simulate_detector(&domain, &src.student, student_seed).map_err(|e| e.in_stage("student"))?;
            let (train_domain, test_domain) = domain.split_at(domain.frames.len() / 2);
            shared.push(out.persist("student_profile.json", "student profile", &write_profile(&src.student))?);
            let (train_domain, test_domain) = (Box::new(train_domain), Box::new(test_domain));
            (teacher, student, Backend::Simulation { src, train_domain, test_domain, student_seed })
        }
        Source::Adapters(src) => {
            let images = read_image_list(&src.image_list).map_err(|e| e.in_stage("images"))?;
            if images.len() < 2 {
                return Err(Error::usage("image list needs at least 2 entries for the train/test split").in_stage("images"));
            }
            let runs = cfg.output_dir.join("adapter_runs");
            let teacher = run_detect(&src.teacher, &images, &runs.join("teacher")).map_err(|e| e.in_stage("teacher"))?;
            let student =
                run_detect(&src.student_detect, &images, &runs.join("student")).map_err(|e| e.in_stage("student"))?;
            let k = images.len() / 2;
            let backend = Backend::Adapters { src, test_images: images[k..].to_vec(), test_offset: k as u64 };
            (teacher, student, backend)
        }
    };
    shared.push(out.persist("teacher.json", "teacher stream", &write_stream(&teacher)?)?);
    shared.push(out.persist("student.json", "student stream", &write_stream(&student)?)?);

    let split = split_point(&teacher);
    let train_teacher = teacher.slice_frames(0, split);
    let test_teacher = teacher.slice_frames(split, u64::MAX);
    let train_student = student.slice_frames(0, split);
    let test_student = student.slice_frames(split, u64::MAX);

    let t0 = Instant::now();
    let scored = score_stream(&train_teacher, &train_student, &cfg.curation).map_err(|e| e.in_stage("score"))?;
    let scoring_secs = t0.elapsed().as_secs_f64();
    let scores = ScoresDocument {
        teacher: teacher.source_id.clone(),
        student: student.source_id.clone(),
        epsilon: cfg.curation.epsilon,
        match_config: cfg.curation.match_config,
        frames: scored.clone(),
    };
    shared.push(out.persist("scores.json", "scores", &write_scores(&scores)?)?);

    let before = relative_map(&test_student, &test_teacher, &cfg.eval).map_err(|e| e.in_stage("evaluate"))?;
    shared.push(out.persist("eval_before.json", "evaluation before training", &write_report(&before))?);

    Ok(Prepared {
        cfg,
        backend,
        train_teacher,
        test_teacher,
        scored,
        rmap_before: before.rmap,
        scoring_secs,
        shared,
    })
}

fn variant_dir(strategy: Strategy, n: usize) -> String {
    format!("{strategy}_n{n}")
}

impl Prepared<'_> {
    fn frames_total(&self) -> usize {
        self.scored.len()
    }

    fn run_variant(&self, strategy: Strategy, n: usize, dir: &str) -> Result<PipelineReport> {
        let out = Outputs { root: &self.cfg.output_dir };
        let curation = CurationConfig { n, strategy, ..self.cfg.curation };
        let mut artifacts = self.shared.clone();

        let selection = select(strategy, &self.scored, n);
        let dataset =
            compile_dataset(&selection, &self.train_teacher, &self.scored, &curation).map_err(|e| e.in_stage("compile"))?;
        let manifest_rel = format!("{dir}/manifest.json");
        artifacts.push(out.persist(&manifest_rel, "manifest", &write_manifest(&dataset)?)?);
        let manifest_path = self.cfg.output_dir.join(&manifest_rel);
        let on_disk = parse_manifest(&read_file(&manifest_path)?).map_err(|e| e.in_stage("manifest"))?;

        let t0 = Instant::now();
        let (after, simulated_training) = match &self.backend {
            Backend::Simulation { src, train_domain, test_domain, student_seed } => {
                let signal = training_signal(
                    &src.student,
                    &on_disk,
                    train_domain,
                    &src.training,
                    *student_seed,
                    Execution::default(),
                )
                .map_err(|e| e.in_stage("train"))?;
                let trained = DetectorProfile {
                    name: format!("{}-trained", src.student.name),
                    ..apply_progress(&src.student, &src.training, signal.progress)
                };
                artifacts.push(out.persist(&format!("{dir}/trained_profile.json"), "trained profile", &write_profile(&trained))?);
                let after = simulate_detector(test_domain, &trained, *student_seed).map_err(|e| e.in_stage("inference"))?;
                let summary = SimulatedTraining {
                    covered_hard_objects: signal.covered_hard,
                    missable_hard_objects: signal.missable_hard,
                    progress: signal.progress,
                };
                (after, Some(summary))
            }
            Backend::Adapters { src, test_images, test_offset } => {
                let runs = self.cfg.output_dir.join(dir).join("adapter_runs");
                run_train(&src.student_train, &manifest_path, &runs.join("train")).map_err(|e| e.in_stage("train"))?;
                let mut after = run_detect(&src.student_detect, test_images, &runs.join("inference"))
                    .map_err(|e| e.in_stage("inference"))?;
                for frame in &mut after.frames {
                    frame.frame_index += test_offset;
                }
                (after, None)
            }
        };
        let train_secs = t0.elapsed().as_secs_f64();
        artifacts.push(out.persist(&format!("{dir}/student_after.json"), "student stream after training", &write_stream(&after)?)?);

        let report: EvalReport =
            relative_map(&after, &self.test_teacher, &self.cfg.eval).map_err(|e| e.in_stage("evaluate"))?;
        artifacts.push(out.persist(&format!("{dir}/eval_after.json"), "evaluation after training", &write_report(&report))?);

        let frames_total = self.frames_total();
        let n_used = on_disk.entries.len();
        let pipeline_report = PipelineReport {
            strategy,
            n_requested: n,
            n_used,
            frames_total,
            frames_culled_fraction: 1.0 - n_used as f64 / frames_total as f64,
            rmap_before: self.rmap_before,
            rmap_after: report.rmap,
            simulated_training,
            artifacts,
            timings: Timings { scoring_secs: self.scoring_secs, train_secs },
        };
        out.persist(&format!("{dir}/report.json"), "report", &to_json(&pipeline_report))?;
        Ok(pipeline_report)
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let prepared = prepare(cfg)?;
    let (strategy, n) = (cfg.curation.strategy, cfg.curation.n);
    let report = prepared.run_variant(strategy, n, &variant_dir(strategy, n))?;
    write_file(&cfg.output_dir.join("report.json"), &to_json(&report))?;
    Ok(report)
}

/// One report per `(n, strategy)` pair plus a full-training baseline, all
/// sharing the same snapshots and scores.
pub fn sweep(cfg: &PipelineConfig, n_values: &[usize], strategies: &[Strategy]) -> Result<SweepTable> {
    sweep_with(cfg, n_values, strategies, Execution::default())
}

pub fn sweep_with(
    cfg: &PipelineConfig,
    n_values: &[usize],
    strategies: &[Strategy],
    exec: Execution,
) -> Result<SweepTable> {
    if n_values.is_empty() || strategies.is_empty() {
        return Err(Error::usage("sweep needs at least one n and one strategy"));
    }
    let prepared = prepare(cfg)?;
    let total = prepared.frames_total();
    let full_training = prepared.run_variant(Strategy::Dds, total, "full")?;

    let cells: Vec<(usize, Strategy)> =
        n_values.iter().flat_map(|&n| strategies.iter().map(move |&s| (n, s))).collect();
    // Adapters run one invocation at a time.
    let exec = if matches!(prepared.backend, Backend::Adapters { .. }) { Execution::Sequential } else { exec };
    let reports = exec.try_map(&cells, |&(n, s)| prepared.run_variant(s, n, &variant_dir(s, n)))?;
    let rows = reports
        .into_iter()
        .map(|report| SweepRow { accuracy_drop: full_training.rmap_after - report.rmap_after, report })
        .collect();
    let table = SweepTable { frames_total: total, rmap_before: prepared.rmap_before, full_training, rows };
    write_file(&cfg.output_dir.join("sweep.json"), &to_json(&table))?;
    Ok(table)
}

pub fn write_pipeline_report(report: &PipelineReport) -> Vec<u8> {
    to_json(report)
}
