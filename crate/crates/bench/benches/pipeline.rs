use std::hint::black_box;
use std::sync::Arc;

use classview_core::camsim::face::render_face_photo;
use classview_core::camsim::{capture, generate_classroom};
use classview_core::recognizer::{annotate_sweep, match_query, AnnotateConfig, Embedder, MatchParams};
use classview_core::stitcher::truth_masks;
use classview_core::{
    composite, plan_sweep, project_to_cylinder, CameraSpec, FixtureDetector, FixtureEmbedder, Pose, Roster,
    Scene, SimClock, StitchConfig, Timestamp, WtoILevel,
};
use classview_core::PhotoUpload;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn classroom() -> (Arc<Scene>, Roster) {
    let desc = generate_classroom(161, (0.0, 90.0), 2024);
    let roster = Roster::in_memory(Arc::new(SimClock::new(Timestamp(0))));
    let e = FixtureEmbedder::default();
    for p in &desc.persons {
        let photos = [Pose::Front, Pose::Side, Pose::Side]
            .iter()
            .enumerate()
            .map(|(v, &pose)| PhotoUpload {
                image: render_face_photo(p.appearance_seed, pose, v as u32, 64).to_png(),
                pose,
            })
            .collect();
        roster.enroll("s", photos, WtoILevel::High, &e).unwrap();
    }
    (Arc::new(Scene::new(desc).unwrap()), roster)
}

fn bench_pipeline(c: &mut Criterion) {
    let cam = CameraSpec::default();
    let (scene, roster) = classroom();
    let plan = plan_sweep((0.0, 90.0), &cam, 0.2).unwrap();
    let frames: Vec<_> = plan.pans().iter().map(|&p| capture(&scene, &cam, p, 0.0)).collect();
    let masks: Vec<_> = frames.iter().enumerate().flat_map(|(i, f)| truth_masks(i, f)).collect();

    c.bench_function("capture_frame_640x480", |b| b.iter(|| capture(&scene, &cam, black_box(35.0), 0.0)));

    let mut g = c.benchmark_group("stitch");
    g.throughput(Throughput::Elements(frames.len() as u64));
    g.bench_function("project_4_tiles", |b| {
        b.iter(|| frames.iter().enumerate().map(|(i, f)| project_to_cylinder(i, f)).collect::<Vec<_>>())
    });
    let tiles: Vec<_> = frames.iter().enumerate().map(|(i, f)| project_to_cylinder(i, f)).collect();
    g.bench_function("composite_4_tiles", |b| {
        b.iter_batched(
            || tiles.clone(),
            |t| composite(t, &masks, &StitchConfig::default(), 1).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();

    let pano = composite(tiles, &masks, &StitchConfig::default(), 1).unwrap();
    let gallery = roster.gallery();
    let embedder = FixtureEmbedder::default();
    let detector = FixtureDetector::new(scene.clone());
    let query = embedder
        .embed(&render_face_photo(scene.persons()[80].appearance_seed, Pose::Front, 5, 48))
        .unwrap();

    c.bench_function("match_query_161x3", |b| {
        b.iter(|| match_query(black_box(&query), &gallery, &MatchParams::default()).unwrap())
    });
    c.bench_function("annotate_sweep_161", |b| {
        b.iter(|| annotate_sweep(&pano, &detector, &embedder, &gallery, &AnnotateConfig::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_pipeline
}
criterion_main!(benches);
