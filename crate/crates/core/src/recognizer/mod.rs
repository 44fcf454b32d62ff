//! Face detection and embedding behind pluggable backends, and open-set
//! matching against the consented gallery.

mod fixture;
mod subprocess;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoxPx;
use crate::raster::Raster;
use crate::roster::{ColorClass, StudentId, WtoILevel};
use crate::stitcher::{Panorama, PanoramaGeometry};

pub use fixture::{FixtureDetector, FixtureEmbedder, DEFAULT_DIM};
pub use subprocess::{serve_protocol, SubprocessBackend, PROTOCOL_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecognizerError {
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("embedding dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// L2-normalize `v`. `None` for an empty, zero or non-finite vector.
    pub fn normalized(v: Vec<f32>) -> Option<Self> {
        let n = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        if v.is_empty() || !n.is_finite() || n == 0.0 {
            return None;
        }
        Some(Embedding(v.into_iter().map(|x| (x as f64 / n) as f32).collect()))
    }

    /// Wrap stored values as-is.
    pub fn from_raw(v: Vec<f32>) -> Self {
        Embedding(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        dot / (self.norm() * other.norm())
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, crop: &Raster) -> Result<Embedding, RecognizerError>;
}

/// Raw detector output in panorama pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub pano_box: BoxPx,
    pub score: f32,
}

pub trait Detector: Send + Sync {
    /// Must be deterministic for identical input.
    fn detect(&self, image: &Raster, geometry: &PanoramaGeometry) -> Result<Vec<Detection>, RecognizerError>;
}

#[derive(Debug, Clone)]
pub struct DetectedFace {
    pub pano_box: BoxPx,
    pub crop: Raster,
    pub detection_score: f32,
}

/// Detect faces and cut their crops. Boxes are clipped to the panorama;
/// empty ones are dropped.
pub fn detect_faces(pano: &Panorama, detector: &dyn Detector) -> Result<Vec<DetectedFace>, RecognizerError> {
    let (w, h) = (pano.width() as f64, pano.height() as f64);
    let mut faces: Vec<DetectedFace> = detector
        .detect(&pano.pixels, &pano.geometry)?
        .into_iter()
        .filter_map(|d| {
            let b = d.pano_box.clip(w, h)?;
            Some(DetectedFace {
                crop: pano.pixels.crop(&b),
                pano_box: b,
                detection_score: d.score.clamp(0.0, 1.0),
            })
        })
        .filter(|f| !f.crop.is_empty())
        .collect();
    faces.sort_by(|a, b| a.pano_box.x.total_cmp(&b.pano_box.x));
    Ok(faces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub student_id: StudentId,
    pub display_name: String,
    pub wtoi: WtoILevel,
    pub photo_ids: Vec<String>,
    pub embeddings: Vec<Embedding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    pub tau: f64,
    pub margin: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            tau: 0.5,
            margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `None` is Unknown.
    pub identity: Option<StudentId>,
    pub best_score: f64,
    /// Best score of any other student; `-inf` with fewer than two students.
    pub runner_up_score: f64,
    pub matched_gallery_photo: Option<String>,
}

impl MatchResult {
    fn unknown() -> Self {
        MatchResult {
            identity: None,
            best_score: f64::NEG_INFINITY,
            runner_up_score: f64::NEG_INFINITY,
            matched_gallery_photo: None,
        }
    }
}

/// Open-set decision: the best student (max cosine over their embeddings)
/// is returned only if it clears `tau` and beats the runner-up student by
/// `margin`.
pub fn match_query(
    query: &Embedding,
    gallery: &[GalleryEntry],
    params: &MatchParams,
) -> Result<MatchResult, RecognizerError> {
    let mut best: Option<(usize, usize, f64)> = None;
    let mut runner_up = f64::NEG_INFINITY;
    for (si, entry) in gallery.iter().enumerate() {
        let mut top: Option<(usize, f64)> = None;
        for (ei, e) in entry.embeddings.iter().enumerate() {
            if e.dim() != query.dim() {
                return Err(RecognizerError::DimensionMismatch {
                    expected: query.dim(),
                    got: e.dim(),
                });
            }
            let s = query.cosine(e);
            if top.is_none_or(|(_, t)| s > t) {
                top = Some((ei, s));
            }
        }
        let Some((ei, s)) = top else { continue };
        match best {
            Some((_, _, b)) if s <= b => runner_up = runner_up.max(s),
            _ => {
                if let Some((_, _, b)) = best {
                    runner_up = runner_up.max(b);
                }
                best = Some((si, ei, s));
            }
        }
    }
    let Some((si, ei, score)) = best else {
        return Ok(MatchResult::unknown());
    };
    let entry = &gallery[si];
    let accept = score >= params.tau && score - runner_up >= params.margin;
    Ok(MatchResult {
        identity: accept.then(|| entry.student_id.clone()),
        best_score: score,
        runner_up_score: runner_up,
        matched_gallery_photo: if accept {
            entry.photo_ids.get(ei).cloned()
        } else {
            None
        },
    })
}

/// One box on the teacher's view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    #[serde(rename = "box")]
    pub pano_box: BoxPx,
    pub azimuth_deg: f64,
    pub student_id: Option<StudentId>,
    pub display_name: Option<String>,
    pub wtoi: Option<WtoILevel>,
    pub color: ColorClass,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub params: MatchParams,
    /// Emit nameless neutral boxes for faces that match nobody.
    pub show_unknown: bool,
}

/// detect, embed and match every face in `pano`. Output is sorted by box x.
/// A face whose crop the embedder rejects is treated as Unknown; a detector
/// failure fails the whole sweep.
pub fn annotate_sweep(
    pano: &Panorama,
    detector: &dyn Detector,
    embedder: &dyn Embedder,
    gallery: &[GalleryEntry],
    cfg: &AnnotateConfig,
) -> Result<Vec<FaceAnnotation>, RecognizerError> {
    let faces = detect_faces(pano, detector)?;
    let results: Vec<Result<Option<FaceAnnotation>, RecognizerError>> = faces
        .par_iter()
        .map(|face| {
            let result = match embedder.embed(&face.crop) {
                Ok(e) => match_query(&e, gallery, &cfg.params)?,
                Err(err) => {
                    tracing::debug!(?err, x = face.pano_box.x, "face not embeddable");
                    MatchResult::unknown()
                }
            };
            let (cx, _) = face.pano_box.center();
            let azimuth_deg = pano.azimuth_at(cx);
            let entry = result
                .identity
                .as_ref()
                .and_then(|id| gallery.iter().find(|g| &g.student_id == id));
            Ok(match entry {
                Some(g) => Some(FaceAnnotation {
                    pano_box: face.pano_box,
                    azimuth_deg,
                    student_id: Some(g.student_id.clone()),
                    display_name: Some(g.display_name.clone()),
                    wtoi: Some(g.wtoi),
                    color: g.wtoi.color(),
                    score: result.best_score,
                }),
                None if cfg.show_unknown => Some(FaceAnnotation {
                    pano_box: face.pano_box,
                    azimuth_deg,
                    student_id: None,
                    display_name: None,
                    wtoi: None,
                    color: ColorClass::Neutral,
                    score: result.best_score,
                }),
                None => None,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        if let Some(a) = r? {
            out.push(a);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
