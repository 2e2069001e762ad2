//! Sequential vs rayon execution of the two hot loops: per-row face
//! rendering and per-frame motion transfer. Build with
//! `--no-default-features` to confirm the parallel arm degrades to the
//! sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use deid_core::exec::Exec;
use deid_core::fixtures::{render_exam, ExamSpec};
use deid_core::motion::retarget_video;
use deid_core::pipeline::{make_subject, Backends, DeidParams};
use deid_core::synth::{Background, Expression, FaceScene, HeadPose, Identity};
use deid_core::video::ingest_driving;

const MODES: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

fn render(c: &mut Criterion) {
    let size = (512, 512);
    let scene = FaceScene::new(Identity::random(3), Background::random(3), size);
    let pose = HeadPose::centered(size, 110.0);
    let expr = Expression::neutral();
    let mut g = c.benchmark_group("render_512");
    for exec in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| scene.render(&pose, &expr, exec))
        });
    }
    g.finish();
}

fn retarget(c: &mut Criterion) {
    let mut spec = ExamSpec::new("bench", 11);
    spec.n_frames = 8;
    spec.size = 256;
    let clip = render_exam(&spec, Exec::default()).clip;
    let backends = Backends::reference();
    let params = DeidParams::default();
    let pre = ingest_driving(&clip, backends.landmarks.as_ref(), params.margin_ratio).unwrap();
    let (_, _, subject) = make_subject(&pre, &backends, &params, Exec::default()).unwrap();

    let mut g = c.benchmark_group("retarget_8_frames");
    g.sample_size(10);
    for exec in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| retarget_video(&subject, &pre.clip, backends.motion.as_ref(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, render, retarget);
criterion_main!(benches);
