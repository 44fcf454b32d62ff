use super::*;
use crate::camsim::{capture, random_scene, Scene};
use crate::geometry::BoxPx;
use crate::scanplan::plan_sweep;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cam() -> CameraSpec {
    CameraSpec::with_image(30.0, 320, 240)
}

fn const_frame(pan: f64, value: f32) -> Frame {
    let c = cam();
    Frame {
        pixels: Raster::from_fn(c.image_width_px, c.image_height_px, |_, _| value),
        pan_deg: pan,
        tilt_deg: 0.0,
        camera: c,
        truth: vec![],
    }
}

fn sweep_tiles(scene: &Scene, pans: &[f64]) -> (Vec<Frame>, Vec<CylTile>) {
    let frames: Vec<Frame> = pans.iter().map(|&p| capture(scene, &cam(), p, 0.0)).collect();
    let tiles = frames
        .iter()
        .enumerate()
        .map(|(i, f)| project_to_cylinder(i, f))
        .collect();
    (frames, tiles)
}

#[test]
fn single_tile_is_the_warped_frame() {
    let scene = Scene::new(random_scene(3, (0.0, 30.0), 0.5, 4)).unwrap();
    let (_, tiles) = sweep_tiles(&scene, &[15.0]);
    let tile = tiles[0].clone();
    let pano = composite(tiles, &[], &StitchConfig::default(), 1).unwrap();
    assert!(pano.seams.is_empty());
    let g = &pano.geometry;
    for y in (0..pano.height()).step_by(7) {
        for x in (0..pano.width()).step_by(5) {
            let want = tile
                .sample(g.x_to_phi(x as f64 + 0.5), g.y_to_h(y as f64 + 0.5))
                .unwrap();
            assert_eq!(pano.pixels.get(x, y), want);
        }
    }
}

#[test]
fn constant_tiles_meet_at_the_midpoint() {
    let frames = [const_frame(15.0, 100.0), const_frame(35.0, 120.0)];
    let tiles = frames
        .iter()
        .enumerate()
        .map(|(i, f)| project_to_cylinder(i, f))
        .collect();
    let pano = composite(tiles, &[], &StitchConfig::default(), 1).unwrap();
    let g = &pano.geometry;
    // ppd = 320 / 30; midpoint 25 deg sits (25 - 0) * ppd = 266.67 px from the left edge.
    assert!((g.phi_min_deg - 0.0).abs() < 1e-9);
    let seam = pano.seams[0].column;
    assert_eq!(seam, 267);
    for y in 0..pano.height() {
        for x in 0..pano.width() {
            let want = if x < seam { 100.0 } else { 120.0 };
            assert_eq!(pano.pixels.get(x, y), want, "({x}, {y})");
        }
    }
}

#[test]
fn mask_on_the_midpoint_moves_the_seam() {
    let frames = [const_frame(15.0, 100.0), const_frame(35.0, 120.0)];
    let tiles: Vec<CylTile> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| project_to_cylinder(i, f))
        .collect();
    // A face centered on 25 deg as seen by frame 0.
    let view = tiles[0].geometry.view();
    let (u0, _) = view.cyl_to_pixel(24.0, 0.0).unwrap();
    let (u1, _) = view.cyl_to_pixel(26.0, 0.0).unwrap();
    let b = BoxPx::from_corners(u0, 100.0, u1, 140.0);
    let mask = PersonMask::from_ellipse(0, 320, 240, &b).unwrap();
    let pano = composite(tiles, std::slice::from_ref(&mask), &StitchConfig::default(), 1).unwrap();
    let seam = &pano.seams[0];
    assert!(seam.displaced && !seam.conflict);
    assert_ne!(seam.column, seam.default_column);
    // Source-id oracle: every mask pixel lands on columns sourced by a single frame.
    let mut sources = std::collections::BTreeSet::new();
    for (x, y) in mask.set_pixels() {
        let (px, _) = pano.frame_to_pano(0, x as f64 + 0.5, y as f64 + 0.5).unwrap();
        sources.insert(pano.column_source(px.floor() as u32));
    }
    assert_eq!(sources.len(), 1, "{sources:?}");
}

#[test]
fn gap_between_tiles_is_an_error() {
    let frames = [const_frame(15.0, 1.0), const_frame(50.0, 2.0)];
    let tiles = frames
        .iter()
        .enumerate()
        .map(|(i, f)| project_to_cylinder(i, f))
        .collect();
    assert!(matches!(
        composite(tiles, &[], &StitchConfig::default(), 1),
        Err(StitchError::GapError { .. })
    ));
    assert_eq!(
        composite(vec![], &[], &StitchConfig::default(), 1).unwrap_err(),
        StitchError::NoTiles
    );
}

#[test]
fn coordinate_round_trip_and_exclusive_regions() {
    let scene = Scene::new(random_scene(6, (0.0, 90.0), 0.5, 9)).unwrap();
    let plan = plan_sweep((0.0, 90.0), &cam(), 0.2).unwrap();
    let (_, tiles) = sweep_tiles(&scene, &plan.pans());
    let pano = composite(tiles, &[], &StitchConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let x = rng.random_range(0.0..pano.width() as f64);
        let y = rng.random_range(0.0..pano.height() as f64);
        let (fi, u, v) = pano.pano_to_frame(x, y).unwrap();
        let (x2, y2) = pano.frame_to_pano(fi, u, v).unwrap();
        assert!((x - x2).abs() < 0.5 && (y - y2).abs() < 0.5);
    }
    // Tile 1 alone covers [35 - 15, 55 - 15) = [20, 40) minus the neighbours' reach.
    let g = &pano.geometry;
    let x = g.phi_to_x(35.0);
    assert_eq!(pano.pano_to_frame(x, 10.0).unwrap().0, 1);
    assert!(pano.pano_to_frame(-1.0, 0.0).is_err());
    assert!(pano.pano_to_frame(0.0, pano.height() as f64).is_err());
    assert!(matches!(pano.frame_to_pano(9, 1.0, 1.0), Err(StitchError::UnknownFrame(9))));
}

#[test]
fn angle_to_column_is_linear() {
    let plan = plan_sweep((0.0, 90.0), &cam(), 0.2).unwrap();
    let g = PanoramaGeometry::for_plan(&plan, &cam(), &StitchConfig::default());
    assert_eq!(g.width, 960);
    for phi in [0.0, 12.5, 45.0, 90.0] {
        assert_eq!(g.phi_to_x(phi), (phi - g.phi_min_deg) * g.px_per_degree);
        assert!((g.x_to_phi(g.phi_to_x(phi)) - phi).abs() < 1e-12);
    }
}

#[test]
fn stitched_matches_direct_render() {
    let scene = Scene::new(random_scene(10, (0.0, 90.0), 0.5, 21)).unwrap();
    let plan = plan_sweep((0.0, 90.0), &cam(), 0.2).unwrap();
    let (frames, tiles) = sweep_tiles(&scene, &plan.pans());
    let masks: Vec<PersonMask> = frames
        .iter()
        .enumerate()
        .flat_map(|(i, f)| mask::truth_masks(i, f))
        .collect();
    let pano = composite(tiles, &masks, &StitchConfig::default(), 1).unwrap();
    let g = &pano.geometry;
    let seams: Vec<i64> = pano.seams.iter().map(|s| s.column as i64).collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..pano.height() {
        for x in 0..pano.width() {
            if seams.iter().any(|&s| (x as i64 - s).abs() <= 2) {
                continue;
            }
            let direct = scene.radiance(g.x_to_phi(x as f64 + 0.5), g.y_to_h(y as f64 + 0.5));
            sum += (pano.pixels.get(x, y) - direct).abs() as f64;
            n += 1;
        }
    }
    assert!(sum / (n as f64) < 2.0, "MAE {}", sum / n as f64);
}

#[test]
fn composite_ignores_input_order() {
    let scene = Scene::new(random_scene(5, (0.0, 90.0), 0.5, 5)).unwrap();
    let (_, tiles) = sweep_tiles(&scene, &[15.0, 35.0, 55.0, 75.0]);
    let (_, mut rev) = sweep_tiles(&scene, &[75.0, 55.0, 35.0, 15.0]);
    for (i, t) in rev.iter_mut().enumerate() {
        t.geometry.frame_index = i;
    }
    let a = composite(tiles, &[], &StitchConfig::default(), 1).unwrap();
    let b = composite(rev, &[], &StitchConfig::default(), 1).unwrap();
    assert_eq!(a.pixels, b.pixels);
}

#[test]
fn pan_refinement_recovers_small_offsets() {
    let scene = Scene::new(random_scene(6, (0.0, 90.0), 0.5, 8)).unwrap();
    let mut frames: Vec<Frame> = [15.0, 35.0, 55.0]
        .iter()
        .map(|&p| capture(&scene, &cam(), p, 0.0))
        .collect();
    // The mount reports 35.3 deg while the frame was actually shot at 35.
    frames[1].pan_deg = 35.3;
    let mut tiles: Vec<CylTile> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| project_to_cylinder(i, f))
        .collect();
    refine_pan_offsets(&mut tiles, 0.5);
    assert!((tiles[1].geometry.pan_deg - 35.0).abs() <= 0.02, "{}", tiles[1].geometry.pan_deg);
    assert!((tiles[2].geometry.pan_deg - 55.0).abs() <= 0.02);
}

#[test]
fn mixed_tilt_is_rejected() {
    let mut f = const_frame(35.0, 1.0);
    f.tilt_deg = 5.0;
    let tiles = vec![
        project_to_cylinder(0, &const_frame(15.0, 1.0)),
        project_to_cylinder(1, &f),
    ];
    assert!(matches!(
        composite(tiles, &[], &StitchConfig::default(), 1),
        Err(StitchError::MixedTilt(..))
    ));
}
