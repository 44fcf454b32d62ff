//! Interaction event log and the per-session report computed from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SessionError, SessionId};
use crate::clock::Timestamp;
use crate::roster::{StudentId, WtoILevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    Teacher,
    Student,
    System,
}

/// A recognized face as recorded in a sweep event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenFace {
    pub student_id: StudentId,
    pub azimuth_deg: f64,
    pub wtoi: WtoILevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    SessionStarted {
        session_id: SessionId,
        span_deg: (f64, f64),
    },
    Click {
        x: f64,
        y: f64,
        azimuth_deg: f64,
        sweep_id: u64,
        student_id: Option<StudentId>,
    },
    WtoIChange {
        student_id: StudentId,
        wtoi: WtoILevel,
    },
    Enroll {
        student_id: StudentId,
        wtoi: WtoILevel,
    },
    Withdraw {
        student_id: StudentId,
    },
    SweepPublished {
        sweep_id: u64,
        started_at: Timestamp,
        degraded: bool,
        faces: Vec<SeenFace>,
    },
    SessionStopped {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub actor: Actor,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Append-only log, mirrored to `events.jsonl` when a path is given.
#[derive(Debug)]
pub(super) struct EventLog {
    events: Vec<InteractionEvent>,
    file: Option<BufWriter<File>>,
    closed: bool,
}

impl EventLog {
    pub(super) fn new(path: Option<PathBuf>) -> Result<Self, SessionError> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                Some(BufWriter::new(
                    std::fs::OpenOptions::new().create(true).append(true).open(p)?,
                ))
            }
            None => None,
        };
        Ok(EventLog {
            events: Vec::new(),
            file,
            closed: false,
        })
    }

    /// Timestamps are clamped so they never go backwards.
    pub(super) fn append(
        &mut self,
        now: Timestamp,
        actor: Actor,
        payload: EventPayload,
    ) -> Result<(), SessionError> {
        if self.closed {
            return Ok(());
        }
        let timestamp = self.events.last().map_or(now, |e| e.timestamp.max(now));
        let event = InteractionEvent {
            seq: self.events.len() as u64,
            timestamp,
            actor,
            payload,
        };
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, &event).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        if matches!(event.payload, EventPayload::SessionStopped {}) {
            self.closed = true;
        }
        self.events.push(event);
        Ok(())
    }

    pub(super) fn events(&self) -> &[InteractionEvent] {
        &self.events
    }
}

pub fn read_events(path: &Path) -> Result<Vec<InteractionEvent>, SessionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            SessionError::CorruptLog(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub zone: String,
    pub azimuth_range_deg: (f64, f64),
    pub students: usize,
    /// High 2, Medium 1, Low 0; `None` when nobody was seen in the zone.
    pub mean_wtoi: Option<f64>,
    pub clicks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub count: usize,
    pub degraded: usize,
    /// Mean time from sweep start to publication.
    pub mean_duration_s: Option<f64>,
    pub mean_interval_s: Option<f64>,
    pub min_interval_s: Option<f64>,
    pub max_interval_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: SessionId,
    pub span_deg: (f64, f64),
    pub started_at: Option<Timestamp>,
    pub stopped_at: Option<Timestamp>,
    pub clicks_total: usize,
    pub clicks_unresolved: usize,
    pub clicks_per_student: BTreeMap<StudentId, usize>,
    /// Latest level of every student the session saw, withdrawn ones excluded.
    pub wtoi_distribution: BTreeMap<String, usize>,
    pub zones: Vec<ZoneSummary>,
    pub sweeps: SweepStats,
}

pub const ZONE_NAMES: [&str; 3] = ["left", "center", "right"];

/// Zone index 0..3 of an azimuth: equal thirds of the span, the outer zones
/// absorbing anything beyond the span edges.
pub fn zone_of(azimuth_deg: f64, span_deg: (f64, f64)) -> usize {
    let width = span_deg.1 - span_deg.0;
    let t = (azimuth_deg - span_deg.0) / width * 3.0;
    (t.floor().max(0.0) as usize).min(2)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl SessionReport {
    pub fn from_events(session_id: SessionId, events: &[InteractionEvent]) -> Self {
        let mut span = (0.0, 0.0);
        let mut started_at = None;
        let mut stopped_at = None;
        let mut clicks_per_student: BTreeMap<StudentId, usize> = BTreeMap::new();
        let mut clicks_total = 0;
        let mut clicks_unresolved = 0;
        let mut click_azimuths = Vec::new();
        let mut level: BTreeMap<StudentId, WtoILevel> = BTreeMap::new();
        let mut position: BTreeMap<StudentId, f64> = BTreeMap::new();
        let mut withdrawn: BTreeSet<StudentId> = BTreeSet::new();
        let mut sweep_times = Vec::new();
        let mut durations = Vec::new();
        let mut degraded = 0;

        for e in events {
            match &e.payload {
                EventPayload::SessionStarted { span_deg, .. } => {
                    span = *span_deg;
                    started_at = Some(e.timestamp);
                }
                EventPayload::SessionStopped {} => stopped_at = Some(e.timestamp),
                EventPayload::Click {
                    azimuth_deg,
                    student_id,
                    ..
                } => {
                    clicks_total += 1;
                    click_azimuths.push(*azimuth_deg);
                    match student_id {
                        Some(id) => *clicks_per_student.entry(id.clone()).or_default() += 1,
                        None => clicks_unresolved += 1,
                    }
                }
                EventPayload::Enroll { student_id, wtoi } => {
                    withdrawn.remove(student_id);
                    level.insert(student_id.clone(), *wtoi);
                }
                EventPayload::WtoIChange { student_id, wtoi } => {
                    level.insert(student_id.clone(), *wtoi);
                }
                EventPayload::Withdraw { student_id } => {
                    withdrawn.insert(student_id.clone());
                    level.remove(student_id);
                    position.remove(student_id);
                }
                EventPayload::SweepPublished {
                    started_at,
                    degraded: d,
                    faces,
                    ..
                } => {
                    sweep_times.push(e.timestamp);
                    durations.push(e.timestamp.secs_since(*started_at));
                    degraded += *d as usize;
                    for f in faces {
                        if withdrawn.contains(&f.student_id) {
                            continue;
                        }
                        level.insert(f.student_id.clone(), f.wtoi);
                        position.insert(f.student_id.clone(), f.azimuth_deg);
                    }
                }
            }
        }

        let mut wtoi_distribution: BTreeMap<String, usize> =
            WtoILevel::ALL.iter().map(|l| (l.to_string(), 0)).collect();
        for l in level.values() {
            *wtoi_distribution.entry(l.to_string()).or_default() += 1;
        }

        let third = (span.1 - span.0) / 3.0;
        let zones = (0..3)
            .map(|z| {
                let codes: Vec<f64> = position
                    .iter()
                    .filter(|(_, az)| zone_of(**az, span) == z)
                    .filter_map(|(id, _)| level.get(id))
                    .map(|l| f64::from(l.code()))
                    .collect();
                ZoneSummary {
                    zone: ZONE_NAMES[z].to_string(),
                    azimuth_range_deg: (span.0 + third * z as f64, span.0 + third * (z + 1) as f64),
                    students: codes.len(),
                    mean_wtoi: mean(&codes),
                    clicks: click_azimuths.iter().filter(|a| zone_of(**a, span) == z).count(),
                }
            })
            .collect();

        let intervals: Vec<f64> = sweep_times
            .windows(2)
            .map(|w| w[1].secs_since(w[0]))
            .collect();
        SessionReport {
            session_id,
            span_deg: span,
            started_at,
            stopped_at,
            clicks_total,
            clicks_unresolved,
            clicks_per_student,
            wtoi_distribution,
            zones,
            sweeps: SweepStats {
                count: sweep_times.len(),
                degraded,
                mean_duration_s: mean(&durations),
                mean_interval_s: mean(&intervals),
                min_interval_s: intervals.iter().copied().reduce(f64::min),
                max_interval_s: intervals.iter().copied().reduce(f64::max),
            },
        }
    }
}
