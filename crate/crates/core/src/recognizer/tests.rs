use super::*;
use crate::camsim::{capture, face, Person, Scene, SceneDescription};
use crate::roster::Pose;
use crate::scanplan::{plan_sweep, CameraSpec};
use crate::stitcher::{composite, project_to_cylinder, truth_masks, StitchConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn unit(v: Vec<f32>) -> Embedding {
    Embedding::normalized(v).unwrap()
}

fn entry(id: &str, embeddings: Vec<Embedding>) -> GalleryEntry {
    GalleryEntry {
        student_id: StudentId::from(id),
        display_name: id.to_uppercase(),
        wtoi: WtoILevel::High,
        photo_ids: (0..embeddings.len()).map(|i| format!("{id}-{i}")).collect(),
        embeddings,
    }
}

/// Gallery vector whose cosine with `e0 = [1, 0, 0]` is exactly `s`.
fn at_cosine(s: f32) -> Embedding {
    unit(vec![s, (1.0 - s * s).sqrt(), 0.0])
}

#[test]
fn match_rule_examples() {
    let q = unit(vec![1.0, 0.0, 0.0]);
    let p = MatchParams::default();
    let r = match_query(&q, &[], &p).unwrap();
    assert_eq!(r.identity, None);
    assert_eq!(r.best_score, f64::NEG_INFINITY);

    let g = vec![entry("a", vec![at_cosine(0.9)]), entry("b", vec![at_cosine(0.3)])];
    let r = match_query(&q, &g, &p).unwrap();
    assert_eq!(r.identity, Some(StudentId::from("a")));
    assert!((r.best_score - 0.9).abs() < 1e-6);
    assert_eq!(r.matched_gallery_photo.as_deref(), Some("a-0"));

    let g = vec![entry("a", vec![at_cosine(0.52)]), entry("b", vec![at_cosine(0.50)])];
    let r = match_query(&q, &g, &p).unwrap();
    assert_eq!(r.identity, None);
    assert!(r.best_score >= r.runner_up_score);

    let g = vec![entry("a", vec![at_cosine(0.1), at_cosine(0.8)])];
    assert_eq!(match_query(&q, &g, &p).unwrap().matched_gallery_photo.as_deref(), Some("a-1"));

    let g = vec![entry("a", vec![unit(vec![1.0, 0.0])])];
    assert!(matches!(
        match_query(&q, &g, &p),
        Err(RecognizerError::DimensionMismatch { expected: 3, got: 2 })
    ));
}

fn brute(query: &Embedding, gallery: &[GalleryEntry], p: &MatchParams) -> (Option<StudentId>, f64) {
    let mut scores: Vec<(f64, &StudentId)> = gallery
        .iter()
        .map(|g| {
            let s = g
                .embeddings
                .iter()
                .map(|e| {
                    let dot: f64 = query.as_slice().iter().zip(e.as_slice()).map(|(a, b)| *a as f64 * *b as f64).sum();
                    dot / (query.norm() * e.norm())
                })
                .fold(f64::NEG_INFINITY, f64::max);
            (s, &g.student_id)
        })
        .collect();
    scores.sort_by(|a, b| b.0.total_cmp(&a.0));
    match scores.as_slice() {
        [] => (None, f64::NEG_INFINITY),
        [(s, id)] => ((*s >= p.tau).then(|| (*id).clone()), *s),
        [(s, id), (r, _), ..] => ((*s >= p.tau && s - r >= p.margin).then(|| (*id).clone()), *s),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
    unit((0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn match_agrees_with_brute_force(seed in any::<u64>(), n in 0usize..100, k in 1usize..=5, tau in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let gallery: Vec<GalleryEntry> = (0..n)
            .map(|i| entry(&format!("s{i}"), (0..rng.random_range(1..=k)).map(|_| random_unit(&mut rng, d)).collect()))
            .collect();
        // Queries near a gallery vector as well as unrelated ones.
        let query = if n > 0 && rng.random_bool(0.5) {
            let base = &gallery[rng.random_range(0..n)].embeddings[0];
            unit(base.as_slice().iter().map(|x| x + rng.random_range(-0.1f32..0.1)).collect())
        } else {
            random_unit(&mut rng, d)
        };
        let p = MatchParams { tau, margin: 0.05 };
        let got = match_query(&query, &gallery, &p).unwrap();
        let (id, best) = brute(&query, &gallery, &p);
        prop_assert_eq!(got.identity.clone(), id);
        if n > 0 {
            prop_assert!((got.best_score - best).abs() < 1e-9);
            prop_assert!(got.best_score >= got.runner_up_score);
        }
        if got.identity.is_some() {
            prop_assert!(got.best_score >= p.tau && got.best_score - got.runner_up_score >= p.margin);
        }
        // Positive scaling of the raw query does not change the decision.
        let scaled = unit(query.as_slice().iter().map(|x| x * 3.7).collect());
        prop_assert_eq!(match_query(&scaled, &gallery, &p).unwrap().identity, got.identity);
    }
}

#[test]
fn fixture_embeddings_are_unit_and_identity_keyed() {
    let e = FixtureEmbedder::default();
    let mut intra = f64::INFINITY;
    let mut inter = f64::NEG_INFINITY;
    let seeds: Vec<u64> = (0..40).map(|i| 0x1000 + i * 7919).collect();
    let embs: Vec<Vec<Embedding>> = seeds
        .iter()
        .map(|&s| {
            [(Pose::Front, 0), (Pose::Side, 1), (Pose::Side, 2)]
                .iter()
                .map(|&(pose, v)| e.embed(&face::render_face_photo(s, pose, v, 48)).unwrap())
                .collect()
        })
        .collect();
    for (i, a) in embs.iter().enumerate() {
        for x in a {
            assert!((x.norm() - 1.0).abs() < 1e-6);
            assert_eq!(x.dim(), DEFAULT_DIM);
        }
        intra = intra.min(a[0].cosine(&a[1])).min(a[1].cosine(&a[2]));
        assert_ne!(a[1], a[2], "distinct crops carry distinct noise");
        for b in &embs[i + 1..] {
            inter = inter.max(a[0].cosine(&b[0]));
        }
    }
    assert!(intra >= 0.9, "intra {intra}");
    assert!(inter <= 0.4, "inter {inter}");
    // Same pixels, same vector.
    let crop = face::render_face_photo(5, Pose::Front, 0, 32);
    assert_eq!(e.embed(&crop).unwrap(), e.embed(&crop).unwrap());
    assert!(matches!(
        e.embed(&crop.crop(&BoxPx::new(0.0, 0.0, 5.0, 5.0))),
        Err(RecognizerError::BackendFailure(_))
    ));
}

#[test]
fn noise_matches_its_expected_size() {
    // Per-component sd sigma/sqrt(D): E|n|^2 = sigma^2, so the cosine of a
    // noisy vector with its canonical one is about 1/sqrt(1 + sigma^2).
    let e = FixtureEmbedder::default();
    let crop = face::render_face_photo(77, Pose::Side, 3, 40);
    let got = e.embed(&crop).unwrap().cosine(&e.canonical(face::code_for_seed(77)));
    let want = 1.0 / (1.0f64 + 0.05 * 0.05).sqrt();
    assert!((got - want).abs() < 2e-3, "{got} vs {want}");
}

fn person(id: &str, az: f64, el: f64, seed: u64, label: Option<&str>) -> Person {
    Person {
        person_id: id.into(),
        azimuth_deg: az,
        elevation_deg: el,
        face_size_deg: 2.0,
        identity_label: label.map(String::from),
        appearance_seed: seed,
    }
}

fn scene(persons: Vec<Person>) -> Arc<Scene> {
    Arc::new(
        Scene::new(SceneDescription {
            span_deg: (0.0, 90.0),
            background: Default::default(),
            persons,
        })
        .unwrap(),
    )
}

fn panorama(scene: &Scene) -> Panorama {
    let cam = CameraSpec::default();
    let plan = plan_sweep((0.0, 90.0), &cam, 0.2).unwrap();
    let frames: Vec<_> = plan.pans().iter().map(|&p| capture(scene, &cam, p, 0.0)).collect();
    let tiles = frames.iter().enumerate().map(|(i, f)| project_to_cylinder(i, f)).collect();
    let masks: Vec<_> = frames.iter().enumerate().flat_map(|(i, f)| truth_masks(i, f)).collect();
    composite(tiles, &masks, &StitchConfig::default(), 1).unwrap()
}

#[test]
fn fixture_detector_matches_truth() {
    let empty = scene(vec![]);
    let pano = panorama(&empty);
    let det = FixtureDetector::new(empty);
    assert!(det.detect(&pano.pixels, &pano.geometry).unwrap().is_empty());

    let s = scene(vec![
        person("a", 20.0, 0.0, 11, None),
        person("b", 45.0, 3.0, 22, None),
        person("c", 70.0, -4.0, 33, None),
    ]);
    let pano = panorama(&s);
    let det = FixtureDetector::new(s.clone());
    let found = det.detect(&pano.pixels, &pano.geometry).unwrap();
    assert_eq!(found.len(), 3);
    for (d, p) in found.iter().zip(s.persons()) {
        let truth = crate::camsim::person_pano_box(&pano.geometry, p);
        assert!(d.pano_box.iou(&truth) >= 0.9, "{}", d.pano_box.iou(&truth));
        let (dx, dy) = (d.pano_box.x - truth.x, d.pano_box.y - truth.y);
        assert!((dx * dx + dy * dy).sqrt() <= 1.0 + 1e-9);
    }
    assert_eq!(det.detect(&pano.pixels, &pano.geometry).unwrap(), found);
}

#[test]
fn annotate_sweep_colors_and_suppression() {
    let s = scene(vec![
        person("a", 20.0, 0.0, 0xA1, None),
        person("b", 45.0, 0.0, 0xB2, None),
        person("stranger", 70.0, 0.0, 0xC3, None),
    ]);
    let pano = panorama(&s);
    let e = FixtureEmbedder::default();
    let det = FixtureDetector::new(s);
    let enroll = |seed: u64| -> Vec<Embedding> {
        (0..3)
            .map(|v| {
                let pose = if v == 0 { Pose::Front } else { Pose::Side };
                e.embed(&face::render_face_photo(seed, pose, v, 64)).unwrap()
            })
            .collect()
    };
    let mut ga = entry("a", enroll(0xA1));
    ga.wtoi = WtoILevel::High;
    let mut gb = entry("b", enroll(0xB2));
    gb.wtoi = WtoILevel::Low;
    let gallery = vec![ga, gb];

    let anns = annotate_sweep(&pano, &det, &e, &gallery, &AnnotateConfig::default()).unwrap();
    assert_eq!(anns.len(), 2);
    assert_eq!(anns[0].student_id, Some(StudentId::from("a")));
    assert_eq!(anns[0].color, ColorClass::Green);
    assert_eq!(anns[1].color, ColorClass::Red);
    assert!((anns[0].azimuth_deg - 20.0).abs() < 0.1);

    let cfg = AnnotateConfig {
        show_unknown: true,
        ..Default::default()
    };
    let anns = annotate_sweep(&pano, &det, &e, &gallery, &cfg).unwrap();
    assert_eq!(anns.len(), 3);
    assert!(anns.windows(2).all(|w| w[0].pano_box.x <= w[1].pano_box.x));
    let unknown = &anns[2];
    assert_eq!((unknown.student_id.clone(), unknown.display_name.clone()), (None, None));
    assert_eq!(unknown.color, ColorClass::Neutral);

    // A student missing from the gallery (withdrawn) gets no annotation.
    let anns = annotate_sweep(&pano, &det, &e, &gallery[1..], &AnnotateConfig::default()).unwrap();
    assert_eq!(anns.len(), 1);
    assert_eq!(anns[0].student_id, Some(StudentId::from("b")));
}

struct Failing;

impl Detector for Failing {
    fn detect(&self, _: &Raster, _: &PanoramaGeometry) -> Result<Vec<Detection>, RecognizerError> {
        Err(RecognizerError::BackendFailure("offline".into()))
    }
}

#[test]
fn detector_failure_propagates() {
    let s = scene(vec![person("a", 20.0, 0.0, 1, None)]);
    let pano = panorama(&s);
    let r = annotate_sweep(&pano, &Failing, &FixtureEmbedder::default(), &[], &AnnotateConfig::default());
    assert!(matches!(r, Err(RecognizerError::BackendFailure(_))));
}

#[test]
fn protocol_round_trip_in_memory() {
    let s = scene(vec![person("a", 20.0, 0.0, 0xA1, None)]);
    let pano = panorama(&s);
    let det = FixtureDetector::new(s);
    let emb = FixtureEmbedder::with_dim(32);
    let crop = face::render_face_photo(0xA1, Pose::Front, 0, 40);
    let requests = [
        serde_json::json!({"v": 1, "id": 1, "op": "hello"}).to_string(),
        serde_json::json!({"v": 1, "id": 2, "op": "embed", "image": {
            "width": 40, "height": 40,
            "png_base64": base64::Engine::encode(&base64::engine::general_purpose::STANDARD, crop.to_png())}})
        .to_string(),
        serde_json::json!({"v": 1, "id": 3, "op": "detect", "image": {
            "width": pano.width(), "height": pano.height(),
            "png_base64": base64::Engine::encode(&base64::engine::general_purpose::STANDARD, pano.to_png())},
            "geometry": pano.geometry})
        .to_string(),
        serde_json::json!({"v": 2, "id": 4, "op": "hello"}).to_string(),
        "garbage".to_string(),
    ]
    .join("\n");
    let mut out = Vec::new();
    serve_protocol(requests.as_bytes(), &mut out, &det, &emb).unwrap();
    let replies: Vec<serde_json::Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(replies.len(), 5);
    assert_eq!(replies[0]["dim"], 32);
    let v: Vec<f32> = serde_json::from_value(replies[1]["embedding"].clone()).unwrap();
    let decoded = Raster::from_image_bytes(&crop.to_png()).unwrap();
    assert_eq!(Embedding::from_raw(v), emb.embed(&decoded).unwrap());
    assert_eq!(replies[2]["faces"].as_array().unwrap().len(), 1);
    assert_eq!(replies[2]["id"], 3);
    assert_eq!(replies[3]["ok"], false);
    assert_eq!(replies[4]["ok"], false);
}
