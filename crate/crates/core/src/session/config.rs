use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::camsim::{Frame, Scene, SceneDescription, SimCamera};
use crate::recognizer::{
    Detector, Embedder, FixtureDetector, FixtureEmbedder, MatchParams, SubprocessBackend, DEFAULT_DIM,
};
use crate::scanplan::{plan_grid, CameraSpec, ScanPlan};
use crate::stitcher::StitchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Deterministic in-process backend for simulated scenes.
    Fixture {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// External process speaking the JSON-lines backend protocol.
    Subprocess { command: Vec<String> },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Fixture {
            seed: 0,
            dim: DEFAULT_DIM,
        }
    }
}

impl BackendConfig {
    /// Embedder used for enrollment photos.
    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, SessionError> {
        match self {
            BackendConfig::Fixture { seed, dim } => Ok(Arc::new(FixtureEmbedder {
                dim: *dim,
                seed: *seed,
                ..Default::default()
            })),
            BackendConfig::Subprocess { command } => Ok(Arc::new(spawn(command)?)),
        }
    }
}

fn spawn(command: &[String]) -> Result<SubprocessBackend, SessionError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| SessionError::ConfigError("backend command is empty".into()))?;
    SubprocessBackend::spawn(program, args).map_err(|e| SessionError::ConfigError(e.to_string()))
}

/// Everything a session needs, as read from the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub camera: CameraSpec,
    pub span_deg: (f64, f64),
    /// Fraction of the field of view shared by neighbouring frames.
    pub overlap: f64,
    pub tilt_deg: f64,
    pub tau: f64,
    pub margin: f64,
    pub show_unknown: bool,
    pub stitch: StitchConfig,
    pub backend: BackendConfig,
    /// Scene description file for the simulated camera.
    pub scene: Option<PathBuf>,
    /// Inline scene; takes precedence over `scene`.
    pub scene_inline: Option<SceneDescription>,
    /// Sweep in a background loop instead of only on demand.
    pub continuous: bool,
    /// Wall-clock pause between looped sweeps.
    pub sweep_pause_s: f64,
    /// Write every stitched panorama under the session directory.
    pub export_panoramas: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            camera: CameraSpec::default(),
            span_deg: (0.0, 90.0),
            overlap: 0.2,
            tilt_deg: 0.0,
            tau: MatchParams::default().tau,
            margin: MatchParams::default().margin,
            show_unknown: false,
            stitch: StitchConfig::default(),
            backend: BackendConfig::default(),
            scene: None,
            scene_inline: None,
            continuous: false,
            sweep_pause_s: 0.0,
            export_panoramas: false,
        }
    }
}

impl SessionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SessionError::ConfigError(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| SessionError::ConfigError(e.to_string()))
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            tau: self.tau,
            margin: self.margin,
        }
    }

    pub fn plan(&self) -> Result<ScanPlan, SessionError> {
        plan_grid(self.span_deg, &[self.tilt_deg], &self.camera, self.overlap)
            .map_err(|e| SessionError::ConfigError(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::ConfigError(m));
        self.plan()?;
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [-1, 1]", self.tau));
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin {} must be non-negative", self.margin));
        }
        if !(self.sweep_pause_s >= 0.0) {
            return bad("sweep_pause_s must be non-negative".into());
        }
        if self.scene.is_none() && self.scene_inline.is_none() {
            return bad("a scene is required for the simulated camera".into());
        }
        Ok(())
    }

    pub fn load_scene(&self) -> Result<Arc<Scene>, SessionError> {
        let scene = match (&self.scene_inline, &self.scene) {
            (Some(desc), _) => Scene::new(desc.clone()),
            (None, Some(path)) => Scene::load(path),
            (None, None) => return Err(SessionError::ConfigError("no scene configured".into())),
        };
        scene
            .map(Arc::new)
            .map_err(|e| SessionError::ConfigError(e.to_string()))
    }

    /// Camera driver and backends described by this config.
    pub fn build_pipeline(&self) -> Result<Pipeline, SessionError> {
        let scene = self.load_scene()?;
        let driver = Arc::new(SimCamera::new(scene.clone(), self.camera.clone()));
        let (detector, embedder): (Arc<dyn Detector>, Arc<dyn Embedder>) = match &self.backend {
            BackendConfig::Fixture { seed, dim } => (
                Arc::new(FixtureDetector::new(scene)),
                Arc::new(FixtureEmbedder {
                    dim: *dim,
                    seed: *seed,
                    ..Default::default()
                }),
            ),
            BackendConfig::Subprocess { command } => {
                let b = Arc::new(spawn(command)?);
                (b.clone(), b)
            }
        };
        Ok(Pipeline {
            driver,
            detector,
            embedder,
        })
    }
}

/// Source of frames at commanded pan/tilt positions.
pub trait CameraDriver: Send + Sync {
    fn capture(&self, pan_deg: f64, tilt_deg: f64) -> Result<Frame, String>;
}

impl CameraDriver for SimCamera {
    fn capture(&self, pan_deg: f64, tilt_deg: f64) -> Result<Frame, String> {
        Ok(SimCamera::capture(self, pan_deg, tilt_deg))
    }
}

#[derive(Clone)]
pub struct Pipeline {
    pub driver: Arc<dyn CameraDriver>,
    pub detector: Arc<dyn Detector>,
    pub embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("embedding_dim", &self.embedder.dim())
            .finish()
    }
}
