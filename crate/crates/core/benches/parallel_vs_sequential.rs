//! Sequential vs parallel execution of the heaviest kernels on a synthetic scene.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pcr_core::filter::{ransac_ground_plane_with, RansacParams};
use pcr_core::runtime::{run_pipeline, FrameInput, PipelineConfig};
use pcr_core::synth::{generate_scene, CameraPath, SceneConfig};
use pcr_core::{Exec, Vec3};

fn policies() -> Vec<(&'static str, Exec)> {
    #[cfg_attr(not(feature = "parallel"), allow(unused_mut))]
    let mut v = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Exec::Parallel));
    v
}

fn bench(c: &mut Criterion) {
    let cfg = SceneConfig {
        frames: 10,
        path: CameraPath::Arc,
        precision_target: 0.94,
        recall_target: 0.78,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg).expect("scene");
    let inputs: Vec<FrameInput> = scene
        .frames
        .iter()
        .map(|f| FrameInput {
            frame_id: f.frame_id,
            timestamp: Some(f.timestamp),
            points: Some(f.points.clone()),
            detections: Some(f.detections.clone()),
        })
        .collect();
    let cloud: Vec<Vec3> = scene
        .frames
        .iter()
        .flat_map(|f| f.points.iter().filter_map(|p| p.point3d))
        .collect();
    // Run every iteration so both policies do the same work.
    let params = RansacParams {
        confidence: 1.0,
        ..RansacParams::new(500, 0.05, 1)
    };
    let pipeline_cfg = PipelineConfig::default();

    let mut g = c.benchmark_group("ransac_ground_plane");
    for (name, exec) in policies() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| ransac_ground_plane_with(&cloud, &params, exec).expect("plane"))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("run_pipeline_10_frames");
    g.sample_size(10);
    for (name, exec) in policies() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_pipeline(&inputs, &pipeline_cfg, exec).expect("pipeline"))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
