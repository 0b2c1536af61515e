use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use distilcull::evaluation::write_report;
use distilcull::ingest::{load_stream, parse_scores, read_file, write_file, write_manifest, write_scores, write_stream, ScoresDocument};
use distilcull::pipeline::{sweep, write_pipeline_report, PipelineConfig, SweepTable};
use distilcull::scoring::{compile_dataset, score_stream, select, CurationConfig, DEFAULT_EPSILON};
use distilcull::simulation::rng::derive_seed;
use distilcull::simulation::{generate_domain, parse_profile, simulate_detector, write_domain, write_profile, DetectorProfile, DomainParams};
use distilcull::types::{DetectionStream, FrameDetections};
use distilcull::{relative_map, run_pipeline, Error, MatchConfig, Result, Strategy};

#[derive(Parser)]
#[command(name = "distilcull", version, about = "Consistency scoring, difficult-frame curation and relative mAP for teacher/student detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MatchArgs {
    /// IoU threshold for a teacher/student match.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Teacher detections below this score are dropped.
    #[arg(long, default_value_t = 0.7)]
    teacher_threshold: f64,
    /// Student detections below this score are dropped.
    #[arg(long, default_value_t = 0.5)]
    student_threshold: f64,
    /// Match boxes regardless of class.
    #[arg(long)]
    class_agnostic: bool,
}

impl MatchArgs {
    fn config(&self) -> MatchConfig {
        MatchConfig {
            iou_threshold: self.iou,
            teacher_score_threshold: self.teacher_threshold,
            student_score_threshold: self.student_threshold,
            class_aware: !self.class_agnostic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Teacher,
    Student,
}

#[derive(Subcommand)]
enum Command {
    /// Score every frame by teacher/student inconsistency.
    Score {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select frames from a scores file and compile a training manifest.
    Curate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value = "dds")]
        strategy: Strategy,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative mAP of a candidate stream against teacher labels.
    Eval {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic domain and run a simulated detector over it.
    Simulate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3600)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long)]
        profile: PathBuf,
        /// Detector seed; derived from --seed when omitted.
        #[arg(long)]
        detector_seed: Option<u64>,
        /// Also write the generated domain.
        #[arg(long)]
        domain_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a built-in detector profile.
    Profile {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full curation loop described by a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the loop for every (n, strategy) pair against shared snapshots.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "simple,dds")]
        strategies: Vec<Strategy>,
    },
    /// Detection adapter that replays a recorded stream for the listed images.
    Replay {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn score(teacher: &Path, student: &Path, matching: MatchConfig, epsilon: f64, out: &Path) -> Result<()> {
    let teacher = load_stream(teacher).map_err(|e| e.in_stage("teacher"))?;
    let student = load_stream(student).map_err(|e| e.in_stage("student"))?;
    let cfg = CurationConfig { match_config: matching, epsilon, ..Default::default() };
    let frames = score_stream(&teacher, &student, &cfg)?;
    let doc = ScoresDocument {
        teacher: teacher.source_id,
        student: student.source_id,
        epsilon,
        match_config: matching,
        frames,
    };
    write_file(out, &write_scores(&doc)?)?;
    eprintln!("scored {} frames -> {}", doc.frames.len(), out.display());
    Ok(())
}

fn curate(scores: &Path, teacher: &Path, strategy: Strategy, n: usize, out: &Path) -> Result<()> {
    let doc = parse_scores(&read_file(scores)?).map_err(|e| e.in_stage("scores"))?;
    let teacher = load_stream(teacher).map_err(|e| e.in_stage("teacher"))?;
    let cfg = CurationConfig { match_config: doc.match_config, epsilon: doc.epsilon, n, strategy };
    let selection = select(strategy, &doc.frames, n);
    let dataset = compile_dataset(&selection, &teacher, &doc.frames, &cfg)?;
    write_file(out, &write_manifest(&dataset)?)?;
    eprintln!("selected {} of {} frames ({strategy}) -> {}", dataset.entries.len(), doc.frames.len(), out.display());
    Ok(())
}

fn eval(candidate: &Path, labels: &Path, matching: MatchConfig, out: &Path) -> Result<()> {
    let candidate = load_stream(candidate).map_err(|e| e.in_stage("candidate"))?;
    let labels = load_stream(labels).map_err(|e| e.in_stage("labels"))?;
    let report = relative_map(&candidate, &labels, &matching)?;
    write_file(out, &write_report(&report))?;
    println!("rmap {:.4}", report.rmap);
    Ok(())
}

struct SimulateArgs<'a> {
    seed: u64,
    frames: usize,
    classes: usize,
    profile: &'a Path,
    detector_seed: Option<u64>,
    domain_out: Option<&'a Path>,
    out: &'a Path,
}

fn simulate(a: SimulateArgs<'_>) -> Result<()> {
    let profile = parse_profile(&read_file(a.profile)?).map_err(|e| e.in_stage("profile"))?;
    let params = DomainParams { num_frames: a.frames, class_count: a.classes, ..Default::default() };
    let domain = generate_domain(a.seed, &params)?;
    if let Some(path) = a.domain_out {
        write_file(path, &write_domain(&domain))?;
    }
    let detector_seed = a.detector_seed.unwrap_or_else(|| derive_seed(a.seed, "detector"));
    let stream = simulate_detector(&domain, &profile, detector_seed)?;
    write_file(a.out, &write_stream(&stream)?)?;
    eprintln!("{} frames, {} detections -> {}", stream.frames.len(), stream.detection_count(), a.out.display());
    Ok(())
}

fn print_sweep(table: &SweepTable) {
    println!("frames_total {}  rmap_before {:.4}  full_training {:.4}", table.frames_total, table.rmap_before, table.full_training.rmap_after);
    println!("{:>8} {:>8} {:>10} {:>10} {:>10}", "strategy", "n", "culled", "rmap", "drop");
    for row in &table.rows {
        let r = &row.report;
        println!(
            "{:>8} {:>8} {:>10.4} {:>10.4} {:>10.4}",
            r.strategy.as_str(),
            r.n_used,
            r.frames_culled_fraction,
            r.rmap_after,
            row.accuracy_drop
        );
    }
}

fn replay(fixture: &Path, input: &Path, output: &Path) -> Result<()> {
    let fixture = load_stream(fixture)?;
    let text = String::from_utf8(read_file(input)?).map_err(|_| Error::usage("image list is not UTF-8"))?;
    let by_ref: HashMap<&str, &FrameDetections> = fixture.frames.iter().map(|f| (f.image_ref.as_str(), f)).collect();
    let mut stream = DetectionStream::new(fixture.source_id.clone(), fixture.class_table.clone());
    for (i, image) in text.lines().filter(|l| !l.is_empty()).enumerate() {
        let detections = by_ref.get(image).map(|f| f.detections.clone()).unwrap_or_default();
        stream.frames.push(FrameDetections::new(i as u64, image, detections));
    }
    write_file(output, &write_stream(&stream)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score { teacher, student, matching, epsilon, out } => {
            score(&teacher, &student, matching.config(), epsilon, &out)
        }
        Command::Curate { scores, teacher, strategy, n, out } => curate(&scores, &teacher, strategy, n, &out),
        Command::Eval { candidate, labels, matching, out } => eval(&candidate, &labels, matching.config(), &out),
        Command::Simulate { seed, frames, classes, profile, detector_seed, domain_out, out } => simulate(SimulateArgs {
            seed,
            frames,
            classes,
            profile: &profile,
            detector_seed,
            domain_out: domain_out.as_deref(),
            out: &out,
        }),
        Command::Profile { preset, out } => {
            let profile = match preset {
                Preset::Teacher => DetectorProfile::teacher(),
                Preset::Student => DetectorProfile::pretrained_student(),
            };
            write_file(&out, &write_profile(&profile))
        }
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = run_pipeline(&cfg)?;
            print!("{}", String::from_utf8_lossy(&write_pipeline_report(&report)));
            Ok(())
        }
        Command::Sweep { config, n, strategies } => {
            let cfg = PipelineConfig::load(&config)?;
            let table = sweep(&cfg, &n, &strategies)?;
            print_sweep(&table);
            Ok(())
        }
        Command::Replay { fixture, input, output } => replay(&fixture, &input, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
