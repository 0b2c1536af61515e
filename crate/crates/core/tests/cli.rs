mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{adapter_json, Scripts};
use distilcull::ingest::{write_file, write_stream};
use distilcull::simulation::{generate_domain, simulate_detector, DetectorProfile, DomainParams};

const BIN: &str = env!("CARGO_BIN_EXE_distilcull");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Teacher/student fixture streams plus the image list they cover.
fn fixtures(dir: &Path, frames: usize) -> (PathBuf, PathBuf, PathBuf) {
    let domain = generate_domain(3, &DomainParams { num_frames: frames, ..Default::default() }).unwrap();
    let teacher = simulate_detector(&domain, &DetectorProfile::teacher(), 10).unwrap();
    let student = simulate_detector(&domain, &DetectorProfile::pretrained_student(), 11).unwrap();
    let (t, s, l) = (dir.join("teacher.json"), dir.join("student.json"), dir.join("images.txt"));
    write_file(&t, &write_stream(&teacher).unwrap()).unwrap();
    write_file(&s, &write_stream(&student).unwrap()).unwrap();
    let list: String = teacher.frames.iter().map(|f| format!("{}\n", f.image_ref)).collect();
    std::fs::write(&l, list).unwrap();
    (t, s, l)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn score_curate_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (t, s, _) = fixtures(dir.path(), 60);
    let d = dir.path();
    let out = run(&["score", "--teacher", p(&t), "--student", p(&s), "--iou", "0.5", "--epsilon", "0.5", "--out", p(&d.join("scores.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&[
        "curate", "--scores", p(&d.join("scores.json")), "--teacher", p(&t), "--strategy", "dds", "--n", "8", "--out",
        p(&d.join("manifest.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = distilcull::ingest::load_manifest(&d.join("manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), 8);
    let out = run(&["eval", "--candidate", p(&t), "--labels", p(&t), "--iou", "0.5", "--out", p(&d.join("r.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rmap 100.0000"));
}

#[test]
fn simulate_writes_stream_and_domain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let prof = d.join("prof.json");
    assert_eq!(code(&run(&["profile", "--preset", "student", "--out", p(&prof)])), 0);
    let args = ["simulate", "--seed", "7", "--frames", "30", "--classes", "3", "--profile", p(&prof)];
    let out = run(&[&args[..], &["--domain-out", p(&d.join("dom.json")), "--out", p(&d.join("a.json"))]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&run(&[&args[..], &["--out", p(&d.join("b.json"))]].concat())), 0);
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    let stream = distilcull::ingest::load_stream(&d.join("a.json")).unwrap();
    assert_eq!((stream.frames.len(), stream.class_table.len()), (30, 3));
    assert!(d.join("dom.json").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (t, _, _) = fixtures(d, 10);
    assert_eq!(code(&run(&["score", "--teacher"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
    let missing = run(&["eval", "--candidate", "/nonexistent.json", "--labels", p(&t), "--out", p(&d.join("x"))]);
    assert_eq!(code(&missing), 2);

    let bad = d.join("bad.json");
    std::fs::write(
        &bad,
        r#"{"schema_version":"distilcull/1","source_id":"x","class_table":["car"],
            "frames":[{"frame_index":0,"image_ref":"a","detections":[{"bbox":[0,0,5,5],"class":"car","score":1.5}]}]}"#,
    )
    .unwrap();
    let out = run(&["eval", "--candidate", p(&bad), "--labels", p(&t), "--out", p(&d.join("x"))]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("score"), "{}", stderr(&out));

    std::fs::write(&bad, r#"{"schema_version":"distilcull/9","source_id":"x","class_table":[],"frames":[]}"#).unwrap();
    assert_eq!(code(&run(&["score", "--teacher", p(&bad), "--student", p(&t), "--out", p(&d.join("x"))])), 4);

    let out = run(&["score", "--teacher", p(&t), "--student", p(&t), "--epsilon", "0", "--out", p(&d.join("x"))]);
    assert_eq!(code(&out), 2);

    std::fs::write(d.join("cfg.json"), r#"{"source":{"simulation":{"seed":1}}}"#).unwrap();
    assert_eq!(code(&run(&["pipeline", "--config", p(&d.join("cfg.json"))])), 2);
}

fn adapter_config(dir: &Path, detector: &Path, trainer: &Path, t: &Path, s: &Path, images: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "source": {"adapters": {
            "teacher": adapter_json(detector, &[p(t), "{input}", "{output}"], "detect"),
            "student_detect": adapter_json(detector, &[p(s), "{input}", "{output}"], "detect"),
            "student_train": adapter_json(trainer, &["{input}", "{output}"], "train"),
            "image_list": images,
        }},
        "curation": {"n": 5, "strategy": "dds"},
        "output_dir": dir.join("run"),
    });
    let path = dir.join("pipeline.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn echo_detector(scripts: &Scripts) -> PathBuf {
    scripts.write("echo_detect.sh", &format!("exec '{BIN}' replay --fixture \"$1\" --input \"$2\" --output \"$3\""))
}

#[test]
fn adapter_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let scripts = Scripts::new();
    let (t, s, l) = fixtures(dir.path(), 24);
    let trainer = scripts.write("noop_train.sh", "test -f \"$1\" && mkdir -p \"$2\"");
    let cfg = adapter_config(dir.path(), &echo_detector(&scripts), &trainer, &t, &s, &l);
    let out = run(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["frames_total"], 12);
    assert_eq!(report["n_used"], 5);
    assert!(dir.path().join("run/dds_n5/manifest.json").is_file());

    let out = run(&["sweep", "--config", p(&cfg), "--n", "2,4", "--strategies", "simple,dds"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("run/sweep.json")).unwrap()).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn truncated_detector_output_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scripts = Scripts::new();
    let (t, s, l) = fixtures(dir.path(), 24);
    let truncated = scripts.write(
        "short_detect.sh",
        &format!("head -n -1 \"$2\" > \"$2.short\" && exec '{BIN}' replay --fixture \"$1\" --input \"$2.short\" --output \"$3\""),
    );
    let trainer = scripts.write("noop_train.sh", "exit 0");
    let cfg = adapter_config(dir.path(), &truncated, &trainer, &t, &s, &l);
    let out = run(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("frame count mismatch: 24 input images, 23 output frames"), "{}", stderr(&out));
}

#[test]
fn failing_trainer_exits_with_adapter_code() {
    let dir = tempfile::tempdir().unwrap();
    let scripts = Scripts::new();
    let (t, s, l) = fixtures(dir.path(), 10);
    let trainer = scripts.write("fail_train.sh", "echo boom >&2; exit 1");
    let cfg = adapter_config(dir.path(), &echo_detector(&scripts), &trainer, &t, &s, &l);
    let out = run(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("exit code 1") && stderr(&out).contains("boom"), "{}", stderr(&out));
}
