use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use classview_core::camsim::face::render_face_photo;
use classview_core::camsim::{generate_classroom, random_scene};
use classview_core::recognizer::serve_protocol;
use classview_core::session::report_from_dir;
use classview_core::study_metrics::{compare_phases, read_csv, Distribution, Metric, Phase};
use classview_core::{
    FixtureDetector, FixtureEmbedder, PhotoUpload, Pose, Roster, Scene, SceneDescription,
    SessionConfig, SessionId, SessionManager, SimCamera, SimClock, Timestamp, WtoILevel,
};
use classview_server::ServerConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "classview", version, about = "Classroom scan, recognition and survey tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured listen address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Sweep a simulated scene and write frames, panoramas and the event log.
    Simulate(SimulateArgs),
    /// Print the report of a recorded session.
    Report {
        session: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    /// Compare a survey metric between two phases.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        metric: Metric,
        /// Two phases, e.g. `pre,post`.
        #[arg(long, default_value = "pre,post")]
        compare: String,
    },
    /// Write a scene description.
    GenScene(GenSceneArgs),
    /// Serve the fixture detector and embedder over the backend protocol on stdio.
    #[command(hide = true)]
    BackendFixture {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = classview_core::recognizer::DEFAULT_DIM)]
        dim: usize,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 1)]
    sweeps: u32,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    /// Session config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Do not enroll the scene's persons before sweeping.
    #[arg(long)]
    no_enroll: bool,
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 161)]
    n: usize,
    /// Azimuth span as `lo,hi` degrees.
    #[arg(long, default_value = "0,90", value_parser = parse_span)]
    span: (f64, f64),
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scatter faces at random instead of seating them in rows.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = 0.5)]
    min_gap: f64,
}

fn parse_span(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Serve { config, bind } => serve(&config, bind),
        Command::Simulate(args) => simulate(args),
        Command::Report { session, data_dir } => {
            let report = report_from_dir(&data_dir, &SessionId(session))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Stats { input, metric, compare } => stats(&input, metric, &compare),
        Command::GenScene(args) => gen_scene(args),
        Command::BackendFixture { scene, seed, dim } => {
            let scene = Arc::new(Scene::load(&scene)?);
            let detector = FixtureDetector::new(scene);
            let embedder = FixtureEmbedder {
                dim,
                seed,
                ..Default::default()
            };
            let stdin = std::io::stdin();
            serve_protocol(stdin.lock(), std::io::stdout().lock(), &detector, &embedder)?;
            Ok(())
        }
    }
}

fn serve(config: &Path, bind: Option<String>) -> Result<()> {
    let mut cfg = ServerConfig::load(config)?;
    if let Some(b) = bind {
        cfg.bind = b;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(classview_server::serve(cfg))?;
    Ok(())
}

fn load_session_config(path: Option<&Path>) -> Result<SessionConfig> {
    Ok(match path {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default(),
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let desc = SceneDescription::load(&args.scene)
        .with_context(|| format!("loading scene {}", args.scene.display()))?;
    let mut cfg = load_session_config(args.config.as_deref())?;
    cfg.span_deg = desc.span_deg;
    cfg.scene_inline = Some(desc.clone());
    cfg.export_panoramas = true;
    cfg.continuous = false;

    std::fs::create_dir_all(&args.out)?;
    let clock = Arc::new(SimClock::new(Timestamp(0)));
    let embedder = cfg.backend.embedder()?;
    let roster = Roster::open(&args.out, clock.clone())?;
    let manager = SessionManager::new(Arc::new(roster), embedder, clock, Some(args.out.clone()));

    if !args.no_enroll {
        for (i, p) in desc.persons.iter().enumerate() {
            let name = p.identity_label.clone().unwrap_or_else(|| p.person_id.clone());
            let photos = [Pose::Front, Pose::Side, Pose::Side]
                .iter()
                .enumerate()
                .map(|(v, &pose)| PhotoUpload {
                    image: render_face_photo(p.appearance_seed, pose, v as u32, 64).to_png(),
                    pose,
                })
                .collect();
            manager.enroll(&name, photos, WtoILevel::ALL[i % 3])?;
        }
    }

    // Frames are a pure function of the scene and pose, so one set covers every sweep.
    let scene = cfg.load_scene()?;
    let camera = SimCamera::new(scene, cfg.camera.clone());
    let frames_dir = args.out.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let mut frames = Vec::new();
    for (i, wp) in cfg.plan()?.waypoints.iter().enumerate() {
        let f = camera.capture(wp.pan_deg, wp.tilt_deg);
        let file = format!("frame-{i:02}.png");
        std::fs::write(frames_dir.join(&file), f.pixels.to_png())?;
        frames.push(json!({"file": file, "pan_deg": f.pan_deg, "tilt_deg": f.tilt_deg, "truth": f.truth}));
    }
    std::fs::write(frames_dir.join("frames.json"), serde_json::to_vec_pretty(&frames)?)?;

    let id = manager.start_session(cfg)?;
    let pano_dir = args.out.join("sessions").join(&id.0).join("panoramas");
    let mut sweeps = Vec::new();
    for _ in 0..args.sweeps {
        let snap = manager.run_sweep()?;
        std::fs::create_dir_all(&pano_dir)?;
        std::fs::write(
            pano_dir.join(format!("sweep-{:06}.annotations.json", snap.sweep_id)),
            serde_json::to_vec_pretty(&snap.annotations)?,
        )?;
        sweeps.push(json!({
            "sweep_id": snap.sweep_id,
            "faces": snap.annotations.len(),
            "identified": snap.annotations.iter().filter(|a| a.student_id.is_some()).count(),
            "degraded": snap.degraded,
        }));
    }
    manager.stop_session(&id)?;
    let summary = json!({
        "session_id": id,
        "out": args.out,
        "frames": frames.len(),
        "sweeps": sweeps,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn stats(input: &Path, metric: Metric, compare: &str) -> Result<()> {
    let Some((a, b)) = compare.split_once(',') else {
        bail!("--compare takes two phases, e.g. pre,post");
    };
    let (a, b): (Phase, Phase) = (
        a.trim().parse().map_err(anyhow::Error::msg)?,
        b.trim().parse().map_err(anyhow::Error::msg)?,
    );
    let file = std::fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = read_csv(BufReader::new(file))?;
    let c = compare_phases(&records, metric, a, b)?;
    let out = json!({
        "metric": c.metric,
        "compare": [a, b],
        "t": c.t,
        "df": c.df,
        "p": c.p,
        "d": c.d,
        "distribution": [c.a, c.b],
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    let mut err = std::io::stderr().lock();
    for d in [&c.a, &c.b] {
        write_table(&mut err, d)?;
    }
    Ok(())
}

fn write_table(w: &mut impl Write, d: &Distribution) -> std::io::Result<()> {
    writeln!(w, "{:?} {:?}  n={}  mean={:.3}  sd={:.3}", d.metric, d.phase, d.n, d.mean, d.sd)?;
    for b in &d.buckets {
        writeln!(w, "  {:>3}  {:<22} {:>5}  {:>3}%", b.code, b.label, b.count, b.percent)?;
    }
    Ok(())
}

fn gen_scene(args: GenSceneArgs) -> Result<()> {
    let desc = if args.random {
        random_scene(args.n, args.span, args.min_gap, args.seed)
    } else {
        generate_classroom(args.n, args.span, args.seed)
    };
    desc.validate()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&args.out, desc.to_json())?;
    eprintln!("wrote {} persons to {}", desc.persons.len(), args.out.display());
    Ok(())
}
