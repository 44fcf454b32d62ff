use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::Arc;
use std::time::Duration;

use classview_core::camsim::face::render_face_photo;
use classview_core::camsim::generate_classroom;
use classview_core::recognizer::{detect_faces, Detector, Embedder};
use classview_core::session::{BackendConfig, Pipeline};
use classview_core::study_metrics::{compare_phases, read_csv, Metric, Phase};
use classview_core::{
    FixtureDetector, FixtureEmbedder, PhotoUpload, Pose, Roster, Scene, SceneDescription,
    SessionConfig, SessionManager, SessionReport, SimCamera, SimClock, SubprocessBackend, Timestamp,
    WtoILevel,
};
use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_classview")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("NO_COLOR", "1").output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn small_scene(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scene.json");
    let out = run(&[
        "gen-scene", "--out", path.to_str().unwrap(), "--n", "6", "--seed", "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_scene_matches_the_library_generator() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/classroom.json");
    let out = run(&["gen-scene", "--out", path.to_str().unwrap(), "--n", "161", "--seed", "2024"]);
    assert!(out.status.success());
    let desc = SceneDescription::load(&path).unwrap();
    assert_eq!(desc, generate_classroom(161, (0.0, 90.0), 2024));

    let path = dir.path().join("random.json");
    let out = run(&[
        "gen-scene", "--out", path.to_str().unwrap(), "--n", "10", "--random", "--span", "10, 80",
    ]);
    assert!(out.status.success());
    assert_eq!(SceneDescription::load(&path).unwrap().span_deg, (10.0, 80.0));

    assert!(!run(&["gen-scene", "--out", "x.json", "--span", "90"]).status.success());
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let out = dir.path().join("out");
    let summary = ok_json(&[
        "simulate", "--scene", scene.to_str().unwrap(), "--sweeps", "2", "--out", out.to_str().unwrap(),
    ]);
    let session = summary["session_id"].as_str().unwrap();
    assert_eq!(summary["frames"], 4);
    let sweeps = summary["sweeps"].as_array().unwrap();
    assert_eq!(sweeps.len(), 2);
    for s in sweeps {
        assert_eq!(s["identified"], 6);
        assert_eq!(s["degraded"], Value::Null);
    }
    for f in ["frames/frame-00.png", "frames/frame-03.png", "frames/frames.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let panos = out.join("sessions").join(session).join("panoramas");
    for f in ["sweep-000001.png", "sweep-000001.json", "sweep-000002.annotations.json"] {
        assert!(panos.join(f).is_file(), "{f}");
    }
    let sidecar: Value = serde_json::from_slice(&std::fs::read(panos.join("sweep-000002.json")).unwrap()).unwrap();
    assert_eq!(sidecar["sweep_id"], 2);
    assert_eq!(sidecar["seams"].as_array().unwrap().len(), 3);

    let report: SessionReport =
        serde_json::from_value(ok_json(&["report", session, "--data-dir", out.to_str().unwrap()])).unwrap();
    assert_eq!(report.sweeps.count, 2);
    assert_eq!(report.sweeps.mean_duration_s, Some(8.0));
    assert_eq!(report.wtoi_distribution.values().sum::<usize>(), 6);
    assert_eq!(report.zones.iter().map(|z| z.students).sum::<usize>(), 6);

    let missing = run(&["report", "session-0042", "--data-dir", out.to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("session-0042"));
}

const CSV: &str = "\
respondent_id,phase,attitude_tsi,willingness_tsi,attitude_system,perceived_change,free_text
r1,pre,1,0,1,,
r2,pre,2,1,0,,\"quiet, mostly\"
r3,pre,0,-1,1,,
r4,pre,1,0,2,,
r5,post,2,2,2,increased a lot,
r6,post,3,1,2,increased_a_little,
r7,post,2,2,1,NoChange,
r8,post,3,1,3,increased_a_little,
r9,post,1,0,2,increased a lot,
";

#[test]
fn stats_emits_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("responses.csv");
    std::fs::write(&path, CSV).unwrap();
    let out = run(&["stats", "--in", path.to_str().unwrap(), "--metric", "attitude_tsi", "--compare", "pre,post"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let want = compare_phases(&read_csv(CSV.as_bytes()).unwrap(), Metric::AttitudeTsi, Phase::Pre, Phase::Post).unwrap();
    assert_eq!(v["t"].as_f64().unwrap(), want.t);
    assert_eq!(v["df"].as_f64().unwrap(), 7.0);
    assert_eq!(v["p"].as_f64().unwrap(), want.p);
    assert_eq!(v["d"].as_f64().unwrap(), want.d.unwrap());
    assert_eq!(v["distribution"][0]["n"], 4);
    assert_eq!(v["distribution"][1]["n"], 5);
    let table = String::from_utf8_lossy(&out.stderr);
    assert!(table.contains("n=5"), "{table}");

    let bad = run(&["stats", "--in", path.to_str().unwrap(), "--metric", "happiness"]);
    assert!(!bad.status.success());
    let bad = run(&["stats", "--in", path.to_str().unwrap(), "--metric", "attitude_tsi", "--compare", "pre"]);
    assert!(!bad.status.success());
    std::fs::write(&path, "respondent_id,phase\nr1,pre\n").unwrap();
    let bad = run(&["stats", "--in", path.to_str().unwrap(), "--metric", "attitude_tsi"]);
    assert!(!bad.status.success());
}

fn backend(scene: &Path) -> SubprocessBackend {
    SubprocessBackend::spawn(
        bin(),
        &["backend-fixture".to_string(), "--scene".into(), scene.to_str().unwrap().into(), "--dim".into(), "64".into()],
    )
    .unwrap()
}

#[test]
fn subprocess_backend_agrees_with_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = small_scene(dir.path());
    let scene = Arc::new(Scene::load(&scene_path).unwrap());
    let remote = backend(&scene_path);
    let local = FixtureEmbedder::with_dim(64);
    assert_eq!(Embedder::dim(&remote), 64);

    let photo = render_face_photo(9, Pose::Front, 0, 64);
    let photo = classview_core::Raster::from_image_bytes(&photo.to_png()).unwrap();
    assert_eq!(remote.embed(&photo).unwrap(), local.embed(&photo).unwrap());
    assert!(remote.embed(&classview_core::Raster::new(4, 4)).is_err());

    // Same panorama through both detectors.
    let cfg = SessionConfig {
        span_deg: scene.description().span_deg,
        scene_inline: Some(scene.description().clone()),
        ..Default::default()
    };
    let plan = cfg.plan().unwrap();
    let cam = SimCamera::new(scene.clone(), cfg.camera.clone());
    let frames: Vec<_> = plan.pans().iter().map(|&p| cam.capture(p, 0.0)).collect();
    let tiles = frames.iter().enumerate().map(|(i, f)| classview_core::project_to_cylinder(i, f)).collect();
    let pano = classview_core::composite(tiles, &[], &cfg.stitch, 1).unwrap();
    let pano = {
        let mut p = pano;
        p.pixels = classview_core::Raster::from_image_bytes(&p.pixels.to_png()).unwrap();
        p
    };
    let here = detect_faces(&pano, &FixtureDetector::new(scene.clone())).unwrap();
    let there = detect_faces(&pano, &remote as &dyn Detector).unwrap();
    assert_eq!(here.len(), 6);
    assert_eq!(
        here.iter().map(|f| f.pano_box).collect::<Vec<_>>(),
        there.iter().map(|f| f.pano_box).collect::<Vec<_>>()
    );
}

#[test]
fn session_runs_on_a_subprocess_backend() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = small_scene(dir.path());
    let desc = SceneDescription::load(&scene_path).unwrap();
    let command = vec![
        bin().to_string(),
        "backend-fixture".into(),
        "--scene".into(),
        scene_path.to_str().unwrap().into(),
        "--dim".into(),
        "64".into(),
    ];
    let cfg = SessionConfig {
        scene: Some(scene_path.clone()),
        backend: BackendConfig::Subprocess { command },
        ..Default::default()
    };
    let clock = Arc::new(SimClock::new(Timestamp(0)));
    let manager = SessionManager::new(
        Arc::new(Roster::in_memory(clock.clone())),
        Arc::new(FixtureEmbedder::with_dim(64)),
        clock,
        None,
    );
    for (i, p) in desc.persons.iter().enumerate() {
        let photos = [Pose::Front, Pose::Side, Pose::Side]
            .iter()
            .enumerate()
            .map(|(v, &pose)| PhotoUpload {
                image: render_face_photo(p.appearance_seed, pose, v as u32, 64).to_png(),
                pose,
            })
            .collect();
        manager.enroll(&format!("s{i}"), photos, WtoILevel::ALL[i % 3]).unwrap();
    }
    manager.start_session(cfg.clone()).unwrap();
    let remote = manager.run_sweep().unwrap();
    assert!(remote.degraded.is_none());
    assert_eq!(remote.annotations.iter().filter(|a| a.student_id.is_some()).count(), 6);

    // The in-process pipeline names the same students in the same boxes.
    manager.stop_session(&remote.session_id).unwrap();
    let scene = cfg.load_scene().unwrap();
    let pipeline = Pipeline {
        driver: Arc::new(SimCamera::new(scene.clone(), cfg.camera.clone())),
        detector: Arc::new(FixtureDetector::new(scene)),
        embedder: Arc::new(FixtureEmbedder::with_dim(64)),
    };
    manager.start_session_with(cfg, pipeline).unwrap();
    let local = manager.run_sweep().unwrap();
    let key = |s: &classview_core::SessionSnapshot| {
        s.annotations
            .iter()
            .map(|a| (a.student_id.clone(), a.pano_box, a.color))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&remote), key(&local));
    manager.stop_session(&local.session_id).unwrap();

    let bad = SessionConfig {
        scene: Some(scene_path),
        backend: BackendConfig::Subprocess { command: vec!["/nonexistent/backend".into()] },
        ..Default::default()
    };
    assert!(matches!(
        manager.start_session(bad),
        Err(classview_core::SessionError::ConfigError(_))
    ));
}

fn http(addr: &str, method: &str, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(s, "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = resp.split("\r\n\r\n").nth(1).unwrap_or("").to_string();
    (status, body)
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let cfg = dir.path().join("server.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "bind": "127.0.0.1:0",
            "data_dir": "store",
            "pace": false,
            "autostart": true,
            "scene": scene.file_name().unwrap().to_str().unwrap(),
        })
        .to_string(),
    )
    .unwrap();
    let mut child = Command::new(bin())
        .args(["serve", "--config", cfg.to_str().unwrap()])
        .env("NO_COLOR", "1")
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("addr=").nth(1) {
            break rest.split_whitespace().next().unwrap().to_string();
        }
    };
    let (status, body) = http(&addr, "POST", "/session/sweep");
    assert_eq!(status, 200, "{body}");
    let (status, body) = http(&addr, "GET", "/session/state");
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["sweep_id"], 1);
    assert_eq!(v["session_id"], "session-0001");
    let (status, _) = http(&addr, "POST", "/session/stop");
    assert_eq!(status, 200);
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(dir.path().join("store/sessions/session-0001/events.jsonl").is_file());
}
