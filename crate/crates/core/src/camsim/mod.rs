//! Deterministic simulated classroom and pan-tilt camera.
//!
//! The scene is a radiance function on the cylinder around the camera's pan
//! axis: a smooth procedural background plus square face patches at given
//! azimuth/elevation. [`capture`] renders it through an ideal pinhole, so
//! stitching the frames back onto the cylinder is exact up to resampling.

pub mod face;
mod generate;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_classroom, random_scene};

use crate::geometry::BoxPx;
use crate::projection::View;
use crate::raster::Raster;
use crate::scanplan::{CameraSpec, ScanPlan};
use crate::stitcher::PanoramaGeometry;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene schema error: {0}")]
    Schema(String),
    #[error("reading scene: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TruthError {
    #[error("person {0} is not covered by the panorama")]
    UncoveredPerson(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Procedural { seed: u64 },
}

impl Default for Background {
    fn default() -> Self {
        Background::Procedural { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub face_size_deg: f64,
    #[serde(default)]
    pub identity_label: Option<String>,
    pub appearance_seed: u64,
}

impl Person {
    /// Face extent on the cylinder: `(phi0, phi1, h0, h1)`.
    pub fn cyl_extent(&self) -> (f64, f64, f64, f64) {
        let half = self.face_size_deg / 2.0;
        (
            self.azimuth_deg - half,
            self.azimuth_deg + half,
            (self.elevation_deg - half).to_radians().tan(),
            (self.elevation_deg + half).to_radians().tan(),
        )
    }

    pub fn code(&self) -> u16 {
        face::code_for_seed(self.appearance_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub span_deg: (f64, f64),
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub persons: Vec<Person>,
}

impl SceneDescription {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let desc: SceneDescription =
            serde_json::from_str(text).map_err(|e| SceneError::Schema(e.to_string()))?;
        desc.validate()?;
        Ok(desc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let (lo, hi) = self.span_deg;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(SceneError::Schema(format!("bad span [{lo}, {hi}]")));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.persons {
            if !seen.insert(p.person_id.as_str()) {
                return Err(SceneError::Schema(format!("duplicate person_id {}", p.person_id)));
            }
            if !(p.azimuth_deg >= lo && p.azimuth_deg <= hi) {
                return Err(SceneError::Schema(format!(
                    "person {} azimuth {} outside scene span",
                    p.person_id, p.azimuth_deg
                )));
            }
            if !(p.face_size_deg > 0.0 && p.face_size_deg < 45.0) {
                return Err(SceneError::Schema(format!(
                    "person {} face_size_deg must be in (0, 45)",
                    p.person_id
                )));
            }
            if !(p.elevation_deg.abs() < 60.0) {
                return Err(SceneError::Schema(format!(
                    "person {} elevation out of range",
                    p.person_id
                )));
            }
        }
        Ok(())
    }
}

/// A validated scene with an azimuth index for fast rendering.
#[derive(Debug, Clone)]
pub struct Scene {
    desc: SceneDescription,
    bg_phase: [f64; 4],
    bucket_origin: i64,
    buckets: Vec<Vec<usize>>,
}

impl Scene {
    pub fn new(desc: SceneDescription) -> Result<Self, SceneError> {
        desc.validate()?;
        let Background::Procedural { seed } = desc.background;
        let mut s = seed ^ 0x5DEE_CE66_D1CE_4E5B;
        let mut phase = [0.0; 4];
        for p in phase.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *p = (s >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
        }
        let (lo, hi) = (desc.span_deg.0.floor() as i64 - 45, desc.span_deg.1.ceil() as i64 + 45);
        let mut buckets = vec![Vec::new(); (hi - lo + 1) as usize];
        for (i, p) in desc.persons.iter().enumerate() {
            let (a0, a1, _, _) = p.cyl_extent();
            let b0 = (a0.floor() as i64 - lo).max(0) as usize;
            let b1 = ((a1.floor() as i64 - lo) as usize).min(buckets.len() - 1);
            for b in buckets.iter_mut().take(b1 + 1).skip(b0) {
                b.push(i);
            }
        }
        Ok(Scene {
            desc,
            bg_phase: phase,
            bucket_origin: lo,
            buckets,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Scene::new(SceneDescription::load(path)?)
    }

    pub fn description(&self) -> &SceneDescription {
        &self.desc
    }

    pub fn persons(&self) -> &[Person] {
        &self.desc.persons
    }

    pub fn background(&self, phi_deg: f64, h: f64) -> f64 {
        let p = &self.bg_phase;
        118.0
            + 38.0 * (0.35 * phi_deg + p[0]).sin() * (5.0 * h + p[1]).cos()
            + 14.0 * (2.9 * phi_deg + 7.0 * h + p[2]).sin()
            + 8.0 * (1.7 * phi_deg - 11.0 * h + p[3]).cos()
    }

    /// Scene intensity along the cylinder direction `(phi, h)`.
    pub fn radiance(&self, phi_deg: f64, h: f64) -> f32 {
        let mut value = self.background(phi_deg, h);
        let b = phi_deg.floor() as i64 - self.bucket_origin;
        if b >= 0 && (b as usize) < self.buckets.len() {
            for &i in &self.buckets[b as usize] {
                let person = &self.desc.persons[i];
                let (a0, a1, h0, h1) = person.cyl_extent();
                if phi_deg >= a0 && phi_deg < a1 && h >= h0 && h < h1 {
                    let (w, level) =
                        face::pattern(person.code(), (phi_deg - a0) / (a1 - a0), (h - h0) / (h1 - h0));
                    value = value * (1.0 - w) + level * w;
                }
            }
        }
        value as f32
    }
}

/// Person visible in a frame, with its frame-space bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub person_id: String,
    pub bbox: BoxPx,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub pixels: Raster,
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub camera: CameraSpec,
    /// Ground truth for tests and the fixture segmenter.
    pub truth: Vec<TruthBox>,
}

impl Frame {
    pub fn view(&self) -> View {
        View::new(&self.camera, self.pan_deg, self.tilt_deg)
    }
}

/// Frame-space bounding box of a face, unclipped. `None` if any part of the
/// face is behind the camera.
pub fn project_face(view: &View, person: &Person) -> Option<BoxPx> {
    let (a0, a1, h0, h1) = person.cyl_extent();
    let mut pts = Vec::with_capacity(70);
    const N: usize = 16;
    for k in 0..=N {
        let t = k as f64 / N as f64;
        let a = a0 + (a1 - a0) * t;
        let h = h0 + (h1 - h0) * t;
        pts.extend([(a, h0), (a, h1), (a0, h), (a1, h)]);
    }
    if view.pan_deg > a0 && view.pan_deg < a1 {
        pts.extend([(view.pan_deg, h0), (view.pan_deg, h1)]);
    }
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for (a, h) in pts {
        let (u, v) = view.cyl_to_pixel(a, h)?;
        x0 = x0.min(u);
        x1 = x1.max(u);
        y0 = y0.min(v);
        y1 = y1.max(v);
    }
    Some(BoxPx::from_corners(x0, y0, x1, y1))
}

/// Render the scene as seen by `camera` at `(pan, tilt)`. Pixel values are
/// the scene radiance along the ray through each pixel center.
pub fn capture(scene: &Scene, camera: &CameraSpec, pan_deg: f64, tilt_deg: f64) -> Frame {
    let view = View::new(camera, pan_deg, tilt_deg);
    let (w, h) = (camera.image_width_px, camera.image_height_px);
    let pixels = Raster::from_fn(w, h, |x, y| {
        let (phi, hh) = view.pixel_to_cyl(x as f64 + 0.5, y as f64 + 0.5);
        scene.radiance(phi, hh)
    });
    let truth = scene
        .persons()
        .iter()
        .filter(|p| (p.azimuth_deg - pan_deg).abs() < 80.0)
        .filter_map(|p| {
            let b = project_face(&view, p)?.clip(w as f64, h as f64)?;
            Some(TruthBox {
                person_id: p.person_id.clone(),
                bbox: b,
            })
        })
        .collect();
    Frame {
        pixels,
        pan_deg,
        tilt_deg,
        camera: camera.clone(),
        truth,
    }
}

/// Panorama-space box of one person under `geometry`.
pub fn person_pano_box(geometry: &PanoramaGeometry, person: &Person) -> BoxPx {
    let (a0, a1, h0, h1) = person.cyl_extent();
    BoxPx::from_corners(
        geometry.phi_to_x(a0),
        geometry.h_to_y(h0),
        geometry.phi_to_x(a1),
        geometry.h_to_y(h1),
    )
}

/// Oracle boxes for every person, in the coordinates of the panorama a
/// sweep over `plan` produces.
pub fn ground_truth_annotations(
    scene: &Scene,
    plan: &ScanPlan,
    camera: &CameraSpec,
    geometry: &PanoramaGeometry,
) -> Result<Vec<(String, BoxPx)>, TruthError> {
    let pans = plan.pans();
    let half = camera.hfov_deg / 2.0;
    scene
        .persons()
        .iter()
        .map(|p| {
            let (a0, a1, _, _) = p.cyl_extent();
            let b = person_pano_box(geometry, p);
            let in_view = pans.iter().any(|pan| a0 >= pan - half && a1 <= pan + half);
            let inside = b.x >= 0.0
                && b.y >= 0.0
                && b.right() <= geometry.width as f64
                && b.bottom() <= geometry.height as f64;
            if in_view && inside {
                Ok((p.person_id.clone(), b))
            } else {
                Err(TruthError::UncoveredPerson(p.person_id.clone()))
            }
        })
        .collect()
}

/// Simulated pan-tilt camera over a fixed scene.
#[derive(Debug, Clone)]
pub struct SimCamera {
    pub scene: Arc<Scene>,
    pub camera: CameraSpec,
}

impl SimCamera {
    pub fn new(scene: Arc<Scene>, camera: CameraSpec) -> Self {
        SimCamera { scene, camera }
    }

    pub fn capture(&self, pan_deg: f64, tilt_deg: f64) -> Frame {
        capture(&self.scene, &self.camera, pan_deg, tilt_deg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanplan::plan_sweep;
    use proptest::prelude::*;

    fn person(id: &str, az: f64, el: f64, size: f64) -> Person {
        Person {
            person_id: id.into(),
            azimuth_deg: az,
            elevation_deg: el,
            face_size_deg: size,
            identity_label: None,
            appearance_seed: 0x1234,
        }
    }

    fn scene_with(persons: Vec<Person>) -> Scene {
        Scene::new(SceneDescription {
            span_deg: (0.0, 90.0),
            background: Background::Procedural { seed: 3 },
            persons,
        })
        .unwrap()
    }

    #[test]
    fn empty_scene_is_valid() {
        let d = SceneDescription::from_json(r#"{"span_deg":[0,90]}"#).unwrap();
        assert!(d.persons.is_empty());
    }

    #[test]
    fn schema_errors() {
        assert!(SceneDescription::from_json("{}").is_err());
        let bad = r#"{"span_deg":[0,90],"persons":[{"person_id":"a","azimuth_deg":100,"elevation_deg":0,"face_size_deg":2,"appearance_seed":1}]}"#;
        assert!(matches!(SceneDescription::from_json(bad), Err(SceneError::Schema(_))));
        let zero = bad.replace("100", "10").replace("\"face_size_deg\":2", "\"face_size_deg\":0");
        assert!(SceneDescription::from_json(&zero).is_err());
    }

    #[test]
    fn face_on_axis_is_centered() {
        let s = scene_with(vec![person("a", 15.0, 0.0, 2.0)]);
        let f = capture(&s, &CameraSpec::default(), 15.0, 0.0);
        let (u, v) = f.truth[0].bbox.center();
        assert!((u - 320.0).abs() < 1e-9 && (v - 240.0).abs() < 1e-9);
    }

    #[test]
    fn off_axis_face_follows_pinhole() {
        // focal = 320 / tan(15 deg) = 1194.256; u = 320 + focal * tan(5 deg) = 424.484
        let s = scene_with(vec![person("a", 20.0, 0.0, 1.0)]);
        let f = capture(&s, &CameraSpec::default(), 15.0, 0.0);
        let (u, _) = f.truth[0].bbox.center();
        assert!((u - 424.484).abs() < 0.05, "{u}");
    }

    #[test]
    fn out_of_view_person_has_no_truth() {
        let s = scene_with(vec![person("a", 80.0, 0.0, 2.0)]);
        let f = capture(&s, &CameraSpec::default(), 15.0, 0.0);
        assert!(f.truth.is_empty());
    }

    #[test]
    fn capture_is_pure() {
        let s = scene_with(vec![person("a", 40.0, 3.0, 2.5)]);
        let cam = CameraSpec::with_image(30.0, 160, 120);
        let a = capture(&s, &cam, 35.0, 0.0);
        let b = capture(&s, &cam, 35.0, 0.0);
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn truth_box_center_on_pano_grid() {
        let s = scene_with(vec![person("a", 45.0, 0.0, 2.0)]);
        let plan = plan_sweep((0.0, 90.0), &CameraSpec::default(), 0.2).unwrap();
        let mut g = PanoramaGeometry::for_plan(&plan, &CameraSpec::default(), &Default::default());
        g.px_per_degree = 10.0;
        g.width = 900;
        let truth = ground_truth_annotations(&s, &plan, &CameraSpec::default(), &g).unwrap();
        assert!((truth[0].1.center().0 - 450.0).abs() < 1e-9);
        let empty = scene_with(vec![]);
        assert!(ground_truth_annotations(&empty, &plan, &CameraSpec::default(), &g)
            .unwrap()
            .is_empty());
    }

    proptest! {
        #[test]
        fn truth_centers_obey_pinhole(
            pan in 0.0f64..90.0,
            daz in -10.0f64..10.0,
            el in -5.0f64..5.0,
            size in 0.5f64..2.0,
        ) {
            let az = (pan + daz).clamp(0.0, 90.0);
            let s = scene_with(vec![person("p", az, el, size)]);
            let cam = CameraSpec::default();
            let f = capture(&s, &cam, pan, 0.0);
            prop_assume!(f.truth.len() == 1);
            let b = f.truth[0].bbox;
            prop_assume!(b.x > 0.0 && b.right() < 640.0 && b.y > 0.0 && b.bottom() < 480.0);
            let focal = cam.focal_px();
            let d = (az - pan).to_radians();
            let u = 320.0 + focal * d.tan();
            let v = 240.0 + focal * el.to_radians().tan() / d.cos();
            let (cu, cv) = b.center();
            prop_assert!((cu - u).abs() < 0.5, "u {} vs {}", cu, u);
            prop_assert!((cv - v).abs() < 0.5, "v {} vs {}", cv, v);
        }
    }
}
