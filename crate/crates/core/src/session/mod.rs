//! The sweep, stitch, recognize, publish loop; click resolution; the event
//! log and session reports.
//!
//! Published snapshots are immutable and swapped in atomically, so readers
//! only ever see a whole sweep. Roster mutations made through the manager
//! and snapshot publication are serialized with the event log, which keeps
//! the log in completion order and guarantees that no snapshot published
//! after a withdrawal returns still names the withdrawn student.

mod config;
mod events;

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendConfig, CameraDriver, Pipeline, SessionConfig};
pub use events::{
    read_events, zone_of, Actor, EventPayload, InteractionEvent, SeenFace, SessionReport,
    SweepStats, ZoneSummary, ZONE_NAMES,
};

use events::EventLog;

use crate::clock::{Clock, Timestamp};
use crate::recognizer::{annotate_sweep, AnnotateConfig, Embedder, FaceAnnotation, GalleryEntry};
use crate::roster::{
    ColorClass, PhotoUpload, Roster, RosterError, StudentId, StudentRecord, WtoILevel,
};
use crate::scanplan::{motion_schedule, next_sweep_direction, ScanPlan};
use crate::stitcher::{composite, project_to_cylinder, truth_masks, Panorama, PersonMask};

const KEPT_PANORAMAS: usize = 16;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    ConfigError(String),
    #[error("session {0} is already running")]
    AlreadyRunning(SessionId),
    #[error("no session is running")]
    NotRunning,
    #[error("no snapshot has been published yet")]
    NoSnapshotYet,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("click ({x:.1}, {y:.1}) is outside the panorama")]
    OutOfBounds { x: f64, y: f64 },
    #[error("sweep failed with no earlier panorama to fall back on: {0}")]
    Pipeline(String),
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Roster(#[from] RosterError),
    #[error("session i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl std::fmt::Display for SessionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One published view: a panorama and the annotations computed from it.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSnapshot {
    pub session_id: SessionId,
    /// Monotone per session; a degraded snapshot still takes a new id.
    pub sweep_id: u64,
    /// `sha256:<hex>` of the panorama pixels.
    pub panorama_ref: String,
    /// Sweep that produced the panorama and the annotations. Equal to
    /// `sweep_id` unless the snapshot is degraded.
    pub source_sweep_id: u64,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<FaceAnnotation>,
    pub produced_at: Timestamp,
    /// Pipeline error that forced reuse of the previous panorama.
    pub degraded: Option<String>,
    #[serde(skip)]
    pub panorama: Arc<Panorama>,
}

impl SessionSnapshot {
    pub fn panorama_url(&self) -> String {
        format!("/session/panorama/{}", self.source_sweep_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickResolution {
    pub student_id: StudentId,
    pub display_name: String,
    pub wtoi: WtoILevel,
    pub color: ColorClass,
    pub sweep_id: u64,
}

type Subscriber = Box<dyn Fn(&Arc<SessionSnapshot>) + Send + Sync>;

struct Session {
    id: SessionId,
    config: SessionConfig,
    pipeline: Pipeline,
    dir: Option<PathBuf>,
    plan: Mutex<ScanPlan>,
    sweeps: AtomicU64,
    running: AtomicBool,
    sweep_lock: Mutex<()>,
    snapshot: RwLock<Option<Arc<SessionSnapshot>>>,
    panoramas: Mutex<VecDeque<Arc<Panorama>>>,
    log: Mutex<EventLog>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

struct Inner {
    roster: Arc<Roster>,
    embedder: Arc<dyn Embedder>,
    clock: Arc<dyn Clock>,
    data_dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<SessionId, Arc<Session>>>,
    /// Most recently started session; stays set after it stops.
    current: RwLock<Option<Arc<Session>>>,
    /// Serializes roster mutations, publication and event appends.
    ops: Mutex<()>,
    subscribers: RwLock<Vec<Subscriber>>,
    next_session: AtomicU64,
}

/// Owns the roster front door and every session. Cheap to clone.
#[derive(Clone)]
pub struct SessionManager {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for SessionManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionManager")
            .field("data_dir", &self.inner.data_dir)
            .field("sessions", &self.inner.sessions.read().unwrap().len())
            .finish()
    }
}

fn next_session_number(data_dir: Option<&Path>) -> u64 {
    let Some(dir) = data_dir else { return 1 };
    let Ok(entries) = std::fs::read_dir(dir.join("sessions")) else {
        return 1;
    };
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_prefix("session-"))
                .and_then(|n| n.parse::<u64>().ok())
        })
        .max()
        .unwrap_or(0)
        + 1
}

impl SessionManager {
    /// `embedder` turns enrollment photos into gallery embeddings; it must
    /// agree in dimension with the session backends.
    pub fn new(
        roster: Arc<Roster>,
        embedder: Arc<dyn Embedder>,
        clock: Arc<dyn Clock>,
        data_dir: Option<PathBuf>,
    ) -> Self {
        let next = next_session_number(data_dir.as_deref());
        SessionManager {
            inner: Arc::new(Inner {
                roster,
                embedder,
                clock,
                data_dir,
                sessions: RwLock::new(BTreeMap::new()),
                current: RwLock::new(None),
                ops: Mutex::new(()),
                subscribers: RwLock::new(Vec::new()),
                next_session: AtomicU64::new(next),
            }),
        }
    }

    pub fn roster(&self) -> &Arc<Roster> {
        &self.inner.roster
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.inner.data_dir.as_deref()
    }

    /// Call `f` with every snapshot published from now on, in order.
    pub fn subscribe(&self, f: impl Fn(&Arc<SessionSnapshot>) + Send + Sync + 'static) {
        self.inner.subscribers.write().unwrap().push(Box::new(f));
    }

    fn running_session(&self) -> Option<Arc<Session>> {
        self.inner
            .current
            .read()
            .unwrap()
            .clone()
            .filter(|s| s.running.load(Ordering::SeqCst))
    }

    fn current_session(&self) -> Result<Arc<Session>, SessionError> {
        self.inner.current.read().unwrap().clone().ok_or(SessionError::NotRunning)
    }

    /// Log to the running session, if any.
    fn log(&self, actor: Actor, payload: EventPayload) -> Result<(), SessionError> {
        if let Some(s) = self.running_session() {
            s.log
                .lock()
                .unwrap()
                .append(self.inner.clock.now(), actor, payload)?;
        }
        Ok(())
    }

    pub fn enroll(
        &self,
        name: &str,
        photos: Vec<PhotoUpload>,
        wtoi: WtoILevel,
    ) -> Result<StudentRecord, SessionError> {
        let _ops = self.inner.ops.lock().unwrap();
        let rec = self
            .inner
            .roster
            .enroll(name, photos, wtoi, self.inner.embedder.as_ref())?;
        self.log(
            Actor::Student,
            EventPayload::Enroll {
                student_id: rec.student_id.clone(),
                wtoi,
            },
        )?;
        Ok(rec)
    }

    pub fn add_photo(&self, id: &StudentId, upload: PhotoUpload) -> Result<StudentRecord, SessionError> {
        let _ops = self.inner.ops.lock().unwrap();
        Ok(self
            .inner
            .roster
            .add_photo(id, upload, self.inner.embedder.as_ref())?)
    }

    pub fn set_wtoi(&self, id: &StudentId, level: WtoILevel) -> Result<StudentRecord, SessionError> {
        let _ops = self.inner.ops.lock().unwrap();
        let rec = self.inner.roster.set_wtoi(id, level)?;
        self.log(
            Actor::Student,
            EventPayload::WtoIChange {
                student_id: id.clone(),
                wtoi: level,
            },
        )?;
        Ok(rec)
    }

    /// Once this returns, no later snapshot names the student.
    pub fn withdraw(&self, id: &StudentId) -> Result<StudentRecord, SessionError> {
        let _ops = self.inner.ops.lock().unwrap();
        let rec = self.inner.roster.withdraw(id)?;
        self.log(Actor::Student, EventPayload::Withdraw { student_id: id.clone() })?;
        Ok(rec)
    }

    pub fn start_session(&self, config: SessionConfig) -> Result<SessionId, SessionError> {
        config.validate()?;
        if let Some(s) = self.running_session() {
            return Err(SessionError::AlreadyRunning(s.id.clone()));
        }
        let pipeline = config.build_pipeline()?;
        self.start_session_with(config, pipeline)
    }

    /// Start with an explicit camera driver and backends.
    pub fn start_session_with(
        &self,
        config: SessionConfig,
        pipeline: Pipeline,
    ) -> Result<SessionId, SessionError> {
        let plan = config.plan()?;
        motion_schedule(&plan, &config.camera).map_err(|e| SessionError::ConfigError(e.to_string()))?;
        if pipeline.embedder.dim() != self.inner.embedder.dim() {
            return Err(SessionError::ConfigError(format!(
                "backend embedding dimension {} differs from the roster's {}",
                pipeline.embedder.dim(),
                self.inner.embedder.dim()
            )));
        }
        let session = {
            let _ops = self.inner.ops.lock().unwrap();
            if let Some(s) = self.running_session() {
                return Err(SessionError::AlreadyRunning(s.id.clone()));
            }
            let n = self.inner.next_session.fetch_add(1, Ordering::SeqCst);
            let id = SessionId(format!("session-{n:04}"));
            let dir = self
                .inner
                .data_dir
                .as_ref()
                .map(|d| d.join("sessions").join(&id.0));
            let mut log = EventLog::new(dir.as_ref().map(|d| d.join("events.jsonl")))?;
            log.append(
                self.inner.clock.now(),
                Actor::System,
                EventPayload::SessionStarted {
                    session_id: id.clone(),
                    span_deg: config.span_deg,
                },
            )?;
            let session = Arc::new(Session {
                id: id.clone(),
                config,
                pipeline,
                dir,
                plan: Mutex::new(plan),
                sweeps: AtomicU64::new(0),
                running: AtomicBool::new(true),
                sweep_lock: Mutex::new(()),
                snapshot: RwLock::new(None),
                panoramas: Mutex::new(VecDeque::new()),
                log: Mutex::new(log),
                worker: Mutex::new(None),
            });
            self.inner
                .sessions
                .write()
                .unwrap()
                .insert(id.clone(), session.clone());
            *self.inner.current.write().unwrap() = Some(session.clone());
            session
        };
        if session.config.continuous {
            let manager = self.clone();
            let s = session.clone();
            let handle = std::thread::Builder::new()
                .name(format!("sweep-{}", s.id))
                .spawn(move || manager.sweep_loop(&s))?;
            *session.worker.lock().unwrap() = Some(handle);
        }
        tracing::info!(session = %session.id, "session started");
        Ok(session.id.clone())
    }

    fn sweep_loop(&self, s: &Arc<Session>) {
        let pause = std::time::Duration::from_secs_f64(s.config.sweep_pause_s);
        while s.running.load(Ordering::SeqCst) {
            if let Err(e) = self.sweep(s) {
                if matches!(e, SessionError::NotRunning) {
                    break;
                }
                tracing::warn!(session = %s.id, error = %e, "sweep failed");
            }
            if !pause.is_zero() {
                std::thread::sleep(pause);
            } else {
                std::thread::yield_now();
            }
        }
    }

    /// Stop the session: the loop ends, the log is closed with a terminal
    /// record, and the last snapshot stays readable.
    pub fn stop_session(&self, id: &SessionId) -> Result<(), SessionError> {
        let s = self
            .inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.0.clone()))?;
        if !s.running.swap(false, Ordering::SeqCst) {
            return Err(SessionError::NotRunning);
        }
        if let Some(h) = s.worker.lock().unwrap().take() {
            let _ = h.join();
        }
        // Wait out an in-flight sweep.
        let _sweep = s.sweep_lock.lock().unwrap();
        let _ops = self.inner.ops.lock().unwrap();
        s.log
            .lock()
            .unwrap()
            .append(self.inner.clock.now(), Actor::System, EventPayload::SessionStopped {})?;
        tracing::info!(session = %s.id, "session stopped");
        Ok(())
    }

    pub fn active_session(&self) -> Option<SessionId> {
        self.running_session().map(|s| s.id.clone())
    }

    /// Run one sweep of the running session and publish its snapshot.
    pub fn run_sweep(&self) -> Result<Arc<SessionSnapshot>, SessionError> {
        let s = self.running_session().ok_or(SessionError::NotRunning)?;
        self.sweep(&s)
    }

    fn capture_and_annotate(
        &self,
        s: &Session,
        plan: &ScanPlan,
        gallery: &[GalleryEntry],
        sweep_id: u64,
    ) -> Result<(Panorama, Vec<FaceAnnotation>), String> {
        let clock = &self.inner.clock;
        let motions = motion_schedule(plan, &s.config.camera).map_err(|e| e.to_string())?;
        let mut frames = Vec::with_capacity(plan.len());
        for (i, wp) in plan.waypoints.iter().enumerate() {
            if i > 0 {
                clock.elapse(motions[i - 1].duration_s);
            }
            clock.elapse(s.config.camera.settle_time_s);
            match s.pipeline.driver.capture(wp.pan_deg, wp.tilt_deg) {
                Ok(f) => frames.push(f),
                Err(e) => tracing::warn!(pan = wp.pan_deg, error = %e, "frame dropped"),
            }
            clock.elapse(wp.dwell_s - s.config.camera.settle_time_s);
        }
        let tiles = frames
            .par_iter()
            .enumerate()
            .map(|(i, f)| project_to_cylinder(i, f))
            .collect();
        let masks: Vec<PersonMask> = frames
            .iter()
            .enumerate()
            .flat_map(|(i, f)| truth_masks(i, f))
            .collect();
        let pano = composite(tiles, &masks, &s.config.stitch, sweep_id).map_err(|e| e.to_string())?;
        let cfg = AnnotateConfig {
            params: s.config.match_params(),
            show_unknown: s.config.show_unknown,
        };
        let annotations = annotate_sweep(
            &pano,
            s.pipeline.detector.as_ref(),
            s.pipeline.embedder.as_ref(),
            gallery,
            &cfg,
        )
        .map_err(|e| e.to_string())?;
        Ok((pano, annotations))
    }

    fn sweep(&self, s: &Arc<Session>) -> Result<Arc<SessionSnapshot>, SessionError> {
        let _sweep = s.sweep_lock.lock().unwrap();
        if !s.running.load(Ordering::SeqCst) {
            return Err(SessionError::NotRunning);
        }
        let sweep_id = s.sweeps.fetch_add(1, Ordering::SeqCst) + 1;
        let started_at = self.inner.clock.now();
        let gallery = self.inner.roster.gallery();
        let plan = {
            let mut p = s.plan.lock().unwrap();
            let current = p.clone();
            *p = next_sweep_direction(&current);
            current
        };
        let result = self.capture_and_annotate(s, &plan, &gallery, sweep_id);

        let _ops = self.inner.ops.lock().unwrap();
        let consent = self.inner.roster.read_guard();
        let keep = |a: &FaceAnnotation| a.student_id.as_ref().is_none_or(|id| consent.is_enrolled(id));
        let previous = s.snapshot.read().unwrap().clone();
        let (panorama, annotations, degraded) = match result {
            Ok((pano, annotations)) => {
                let annotations: Vec<FaceAnnotation> = annotations.into_iter().filter(|a| keep(a)).collect();
                (Arc::new(pano), annotations, None)
            }
            Err(e) => {
                tracing::warn!(session = %s.id, sweep_id, error = %e, "sweep degraded");
                let Some(prev) = previous else {
                    drop(consent);
                    return Err(SessionError::Pipeline(e));
                };
                let annotations = prev.annotations.iter().filter(|a| keep(a)).cloned().collect();
                (prev.panorama.clone(), annotations, Some(e))
            }
        };
        let snapshot = Arc::new(SessionSnapshot {
            session_id: s.id.clone(),
            sweep_id,
            panorama_ref: format!("sha256:{}", panorama.pixels.content_hash()),
            source_sweep_id: panorama.sweep_id,
            width: panorama.width(),
            height: panorama.height(),
            annotations,
            produced_at: self.inner.clock.now(),
            degraded,
            panorama: panorama.clone(),
        });
        if snapshot.degraded.is_none() {
            let mut kept = s.panoramas.lock().unwrap();
            kept.push_back(panorama.clone());
            while kept.len() > KEPT_PANORAMAS {
                kept.pop_front();
            }
            if let (true, Some(dir)) = (s.config.export_panoramas, &s.dir) {
                if let Err(e) = panorama.export(&dir.join("panoramas"), &format!("sweep-{sweep_id:06}")) {
                    tracing::warn!(error = %e, "panorama export failed");
                }
            }
        }
        *s.snapshot.write().unwrap() = Some(snapshot.clone());
        let faces = snapshot
            .annotations
            .iter()
            .filter_map(|a| {
                Some(SeenFace {
                    student_id: a.student_id.clone()?,
                    azimuth_deg: a.azimuth_deg,
                    wtoi: a.wtoi?,
                })
            })
            .collect();
        s.log.lock().unwrap().append(
            snapshot.produced_at,
            Actor::System,
            EventPayload::SweepPublished {
                sweep_id,
                started_at,
                degraded: snapshot.degraded.is_some(),
                faces,
            },
        )?;
        drop(consent);
        for f in self.inner.subscribers.read().unwrap().iter() {
            f(&snapshot);
        }
        Ok(snapshot)
    }

    /// Latest snapshot of the most recent session, running or stopped.
    pub fn current_state(&self) -> Result<Arc<SessionSnapshot>, SessionError> {
        self.current_session()?
            .snapshot
            .read()
            .unwrap()
            .clone()
            .ok_or(SessionError::NoSnapshotYet)
    }

    /// A recent panorama of the most recent session.
    pub fn panorama(&self, sweep_id: u64) -> Option<Arc<Panorama>> {
        let s = self.current_session().ok()?;
        let kept = s.panoramas.lock().unwrap();
        kept.iter().find(|p| p.sweep_id == sweep_id).cloned()
    }

    /// The student whose box contains `(x, y)` in the current snapshot; the
    /// smallest box wins where boxes overlap. Every click is logged.
    pub fn resolve_click(&self, x: f64, y: f64) -> Result<Option<ClickResolution>, SessionError> {
        let s = self.current_session()?;
        let snap = s.snapshot.read().unwrap().clone().ok_or(SessionError::NoSnapshotYet)?;
        if !snap.panorama.geometry.contains(x, y) {
            return Err(SessionError::OutOfBounds { x, y });
        }
        let resolution = hit_test(&snap.annotations, x, y).and_then(|a| {
            Some(ClickResolution {
                student_id: a.student_id.clone()?,
                display_name: a.display_name.clone()?,
                wtoi: a.wtoi?,
                color: a.color,
                sweep_id: snap.sweep_id,
            })
        });
        let _ops = self.inner.ops.lock().unwrap();
        s.log.lock().unwrap().append(
            self.inner.clock.now(),
            Actor::Teacher,
            EventPayload::Click {
                x,
                y,
                azimuth_deg: snap.panorama.azimuth_at(x),
                sweep_id: snap.sweep_id,
                student_id: resolution.as_ref().map(|r| r.student_id.clone()),
            },
        )?;
        Ok(resolution)
    }

    pub fn events(&self, id: &SessionId) -> Result<Vec<InteractionEvent>, SessionError> {
        if let Some(s) = self.inner.sessions.read().unwrap().get(id) {
            return Ok(s.log.lock().unwrap().events().to_vec());
        }
        match &self.inner.data_dir {
            Some(dir) => {
                let path = dir.join("sessions").join(&id.0).join("events.jsonl");
                if !path.exists() {
                    return Err(SessionError::UnknownSession(id.0.clone()));
                }
                read_events(&path)
            }
            None => Err(SessionError::UnknownSession(id.0.clone())),
        }
    }

    /// Report computed from the session's event log alone.
    pub fn session_report(&self, id: &SessionId) -> Result<SessionReport, SessionError> {
        let events = self.events(id)?;
        Ok(SessionReport::from_events(id.clone(), &events))
    }
}

/// Smallest identified box containing `(x, y)`.
pub fn hit_test(annotations: &[FaceAnnotation], x: f64, y: f64) -> Option<&FaceAnnotation> {
    annotations
        .iter()
        .filter(|a| a.student_id.is_some() && a.pano_box.contains(x, y))
        .min_by(|a, b| a.pano_box.area().total_cmp(&b.pano_box.area()))
}

/// Report for a session directory written by an earlier process.
pub fn report_from_dir(data_dir: &Path, id: &SessionId) -> Result<SessionReport, SessionError> {
    let path = data_dir.join("sessions").join(&id.0).join("events.jsonl");
    if !path.exists() {
        return Err(SessionError::UnknownSession(id.0.clone()));
    }
    Ok(SessionReport::from_events(id.clone(), &read_events(&path)?))
}
