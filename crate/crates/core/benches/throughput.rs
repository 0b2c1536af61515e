use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use distilcull::evaluation::relative_map_with;
use distilcull::scoring::score_stream_with;
use distilcull::simulation::{generate_domain, simulate_detector, simulate_detector_with_stats, DetectorProfile, DomainParams};
use distilcull::{CurationConfig, Execution, MatchConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn throughput(c: &mut Criterion) {
    let domain = generate_domain(11, &DomainParams { num_frames: 3600, ..Default::default() }).unwrap();
    let student_profile = DetectorProfile::pretrained_student();
    let teacher = simulate_detector(&domain, &DetectorProfile::teacher(), 1).unwrap();
    let student = simulate_detector(&domain, &student_profile, 2).unwrap();
    let curation = CurationConfig::default();
    let eval = MatchConfig::default();

    let mut group = c.benchmark_group("throughput_3600_frames");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("score_stream", name), &exec, |b, &exec| {
            b.iter(|| score_stream_with(black_box(&teacher), black_box(&student), &curation, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("simulate_detector", name), &exec, |b, &exec| {
            b.iter(|| simulate_detector_with_stats(black_box(&domain), &student_profile, 2, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("relative_map", name), &exec, |b, &exec| {
            b.iter(|| relative_map_with(black_box(&student), black_box(&teacher), &eval, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, throughput);
criterion_main!(benches);
