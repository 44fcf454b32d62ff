//! Pan/tilt sweep planning.
//!
//! A sweep is a list of waypoints whose horizontal fields of view tile the
//! requested angular span with a minimum overlap. The camera travels between
//! waypoints at its configured pan speed (never faster, never above the
//! mount's speed cap) and holds still at each one for settle + snap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotation speed ceiling applied by the default configuration.
pub const DEFAULT_SPEED_CAP_DEG_S: f64 = 10.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("infeasible span [{0}, {1}]: width must be positive")]
    InfeasibleSpan(f64, f64),
    #[error("overlap fraction {0} outside [0, 1)")]
    InvalidOverlap(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("motion of {degrees:.3} deg would need {speed:.3} deg/s, cap is {cap:.3} deg/s")]
    SpeedCapViolation { degrees: f64, speed: f64, cap: f64 },
    #[error("waypoint {index} dwells {dwell_s} s, camera needs {required_s} s to settle and snap")]
    PauseViolation {
        index: usize,
        dwell_s: f64,
        required_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub hfov_deg: f64,
    pub max_pan_speed_deg_s: f64,
    /// Hard ceiling for `max_pan_speed_deg_s`.
    pub speed_cap_deg_s: f64,
    pub settle_time_s: f64,
    pub snap_time_s: f64,
    pub image_width_px: u32,
    pub image_height_px: u32,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            hfov_deg: 30.0,
            max_pan_speed_deg_s: DEFAULT_SPEED_CAP_DEG_S,
            speed_cap_deg_s: DEFAULT_SPEED_CAP_DEG_S,
            settle_time_s: 0.3,
            snap_time_s: 0.2,
            image_width_px: 640,
            image_height_px: 480,
        }
    }
}

impl CameraSpec {
    pub fn with_image(hfov_deg: f64, width: u32, height: u32) -> Self {
        CameraSpec {
            hfov_deg,
            image_width_px: width,
            image_height_px: height,
            ..CameraSpec::default()
        }
    }

    /// Pinhole focal length in pixels: `(W / 2) / tan(hfov / 2)`.
    pub fn focal_px(&self) -> f64 {
        (self.image_width_px as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn vfov_deg(&self) -> f64 {
        2.0 * ((self.image_height_px as f64 / 2.0) / self.focal_px())
            .atan()
            .to_degrees()
    }

    pub fn cx(&self) -> f64 {
        self.image_width_px as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.image_height_px as f64 / 2.0
    }

    /// Time the camera must hold still at each waypoint.
    pub fn dwell_s(&self) -> f64 {
        self.settle_time_s + self.snap_time_s
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidCamera(m.to_string()));
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad("hfov_deg must be in (0, 180)");
        }
        if self.image_width_px == 0 || self.image_height_px == 0 {
            return bad("image dimensions must be positive");
        }
        if !(self.settle_time_s >= 0.0 && self.snap_time_s >= 0.0) {
            return bad("settle and snap times must be non-negative");
        }
        if !(self.max_pan_speed_deg_s > 0.0 && self.max_pan_speed_deg_s.is_finite()) {
            return bad("max_pan_speed_deg_s must be positive");
        }
        if self.max_pan_speed_deg_s > self.speed_cap_deg_s + EPS {
            return Err(PlanError::SpeedCapViolation {
                degrees: 0.0,
                speed: self.max_pan_speed_deg_s,
                cap: self.speed_cap_deg_s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepDirection {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub waypoints: Vec<Waypoint>,
    pub span: (f64, f64),
    pub direction: SweepDirection,
}

impl ScanPlan {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn pans(&self) -> Vec<f64> {
        self.waypoints.iter().map(|w| w.pan_deg).collect()
    }
}

/// One commanded pan/tilt move between consecutive waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub duration_s: f64,
}

impl Motion {
    pub fn degrees(&self) -> f64 {
        (self.to.0 - self.from.0)
            .abs()
            .max((self.to.1 - self.from.1).abs())
    }

    pub fn speed_deg_s(&self) -> f64 {
        if self.duration_s > 0.0 {
            self.degrees() / self.duration_s
        } else {
            0.0
        }
    }
}

/// Evenly spaced pan centers that cover `span` with at least `overlap_frac`
/// of the field of view shared between neighbours.
fn pan_centers(span: (f64, f64), hfov: f64, overlap_frac: f64) -> Vec<f64> {
    let (lo, hi) = span;
    let width = hi - lo;
    if width <= hfov + EPS {
        return vec![(lo + hi) / 2.0];
    }
    let step_max = hfov * (1.0 - overlap_frac);
    let n = ((width - hfov) / step_max - EPS).ceil() as usize + 1;
    let first = lo + hfov / 2.0;
    let last = hi - hfov / 2.0;
    let step = (last - first) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i + 1 == n {
                last
            } else {
                first + step * i as f64
            }
        })
        .collect()
}

fn check_inputs(span: (f64, f64), camera: &CameraSpec, overlap_frac: f64) -> Result<(), PlanError> {
    camera.validate()?;
    if !(span.1 - span.0 > 0.0) || !span.0.is_finite() || !span.1.is_finite() {
        return Err(PlanError::InfeasibleSpan(span.0, span.1));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(PlanError::InvalidOverlap(overlap_frac));
    }
    Ok(())
}

/// Single-row sweep at tilt 0.
pub fn plan_sweep(
    span: (f64, f64),
    camera: &CameraSpec,
    overlap_frac: f64,
) -> Result<ScanPlan, PlanError> {
    plan_grid(span, &[0.0], camera, overlap_frac)
}

/// Multi-row sweep: the pan centers of [`plan_sweep`] crossed with the given
/// tilt rows, visited row by row in serpentine order.
pub fn plan_grid(
    span: (f64, f64),
    tilts_deg: &[f64],
    camera: &CameraSpec,
    overlap_frac: f64,
) -> Result<ScanPlan, PlanError> {
    check_inputs(span, camera, overlap_frac)?;
    if tilts_deg.is_empty() {
        return Err(PlanError::InvalidCamera("at least one tilt row is required".into()));
    }
    let pans = pan_centers(span, camera.hfov_deg, overlap_frac);
    let dwell = camera.dwell_s();
    let mut waypoints = Vec::with_capacity(pans.len() * tilts_deg.len());
    for (row, &tilt) in tilts_deg.iter().enumerate() {
        let mut add = |p: f64| {
            waypoints.push(Waypoint {
                pan_deg: p,
                tilt_deg: tilt,
                dwell_s: dwell,
            })
        };
        if row % 2 == 0 {
            pans.iter().copied().for_each(&mut add);
        } else {
            pans.iter().rev().copied().for_each(&mut add);
        }
    }
    Ok(ScanPlan {
        waypoints,
        span,
        direction: SweepDirection::Forward,
    })
}

/// Moves between consecutive waypoints at exactly the camera's pan speed.
pub fn motion_schedule(plan: &ScanPlan, camera: &CameraSpec) -> Result<Vec<Motion>, PlanError> {
    camera.validate()?;
    let speed = camera.max_pan_speed_deg_s;
    let motions: Vec<Motion> = plan
        .waypoints
        .windows(2)
        .map(|w| {
            let from = (w[0].pan_deg, w[0].tilt_deg);
            let to = (w[1].pan_deg, w[1].tilt_deg);
            let deg = (to.0 - from.0).abs().max((to.1 - from.1).abs());
            Motion {
                from,
                to,
                duration_s: deg / speed,
            }
        })
        .collect();
    for m in &motions {
        let s = m.speed_deg_s();
        if s > camera.speed_cap_deg_s + EPS {
            return Err(PlanError::SpeedCapViolation {
                degrees: m.degrees(),
                speed: s,
                cap: camera.speed_cap_deg_s,
            });
        }
    }
    Ok(motions)
}

/// Total time of one sweep: every dwell plus every inter-waypoint move at
/// the camera's pan speed.
pub fn sweep_duration(plan: &ScanPlan, camera: &CameraSpec) -> Result<f64, PlanError> {
    let required = camera.dwell_s();
    for (index, w) in plan.waypoints.iter().enumerate() {
        if w.dwell_s + EPS < required {
            return Err(PlanError::PauseViolation {
                index,
                dwell_s: w.dwell_s,
                required_s: required,
            });
        }
    }
    let travel: f64 = motion_schedule(plan, camera)?
        .iter()
        .map(|m| m.duration_s)
        .sum();
    let dwell: f64 = plan.waypoints.iter().map(|w| w.dwell_s).sum();
    Ok(dwell + travel)
}

/// Same waypoints in the opposite order, for back-and-forth sweeping
/// without a rewind.
pub fn next_sweep_direction(previous: &ScanPlan) -> ScanPlan {
    let mut waypoints = previous.waypoints.clone();
    waypoints.reverse();
    ScanPlan {
        waypoints,
        span: previous.span,
        direction: match previous.direction {
            SweepDirection::Forward => SweepDirection::Reverse,
            SweepDirection::Reverse => SweepDirection::Forward,
        },
    }
}
