//! Deterministic backend for the simulated classroom.
//!
//! The detector reads face boxes off the scene description; the embedder
//! decodes the face code from the crop pixels and maps it to a canonical
//! unit vector plus small crop-seeded noise.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

use super::{Detection, Detector, Embedder, Embedding, RecognizerError};
use crate::camsim::{face, person_pano_box, Scene};
use crate::raster::Raster;
use crate::stitcher::PanoramaGeometry;

pub const DEFAULT_DIM: usize = 512;

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// Expected norm of the noise added before normalization.
    pub sigma: f64,
}

impl Default for FixtureEmbedder {
    fn default() -> Self {
        FixtureEmbedder {
            dim: DEFAULT_DIM,
            seed: 0,
            sigma: 0.05,
        }
    }
}

impl FixtureEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        FixtureEmbedder {
            dim,
            ..Default::default()
        }
    }

    /// Noise-free identity vector for a face code.
    pub fn canonical(&self, code: u16) -> Embedding {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, code as u64 + 1));
        let v: Vec<f32> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Embedding::normalized(v).expect("gaussian vector is nonzero")
    }

    fn noise_seed(crop: &Raster) -> u64 {
        let mut h = Sha256::new();
        h.update(crop.width().to_le_bytes());
        h.update(crop.height().to_le_bytes());
        for v in crop.data() {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

impl Embedder for FixtureEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, crop: &Raster) -> Result<Embedding, RecognizerError> {
        if self.dim == 0 {
            return Err(RecognizerError::BackendFailure("dimension must be positive".into()));
        }
        let code = face::decode(crop).ok_or_else(|| {
            RecognizerError::BackendFailure(format!(
                "crop {}x{} too small to resolve a face",
                crop.width(),
                crop.height()
            ))
        })?;
        let base = self.canonical(code);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, Self::noise_seed(crop)));
        let noise = Normal::new(0.0, self.sigma / (self.dim as f64).sqrt())
            .map_err(|e| RecognizerError::BackendFailure(e.to_string()))?;
        let v = base
            .as_slice()
            .iter()
            .map(|&x| (x as f64 + noise.sample(&mut rng)) as f32)
            .collect();
        Embedding::normalized(v)
            .ok_or_else(|| RecognizerError::BackendFailure("degenerate embedding".into()))
    }
}

/// Boxes from the scene description with up to `jitter_px` of displacement,
/// seeded per person so detection is deterministic.
#[derive(Debug, Clone)]
pub struct FixtureDetector {
    pub scene: Arc<Scene>,
    pub jitter_px: f64,
    pub seed: u64,
}

impl FixtureDetector {
    pub fn new(scene: Arc<Scene>) -> Self {
        FixtureDetector {
            scene,
            jitter_px: 1.0,
            seed: 0,
        }
    }

    fn offset(&self, person_id: &str) -> (f64, f64) {
        let mut h = Sha256::new();
        h.update(person_id.as_bytes());
        let digest = h.finalize();
        let key = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, key));
        let r = self.jitter_px * rng.random::<f64>();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        (r * a.cos(), r * a.sin())
    }
}

impl Detector for FixtureDetector {
    fn detect(&self, image: &Raster, geometry: &PanoramaGeometry) -> Result<Vec<Detection>, RecognizerError> {
        let (w, h) = (image.width() as f64, image.height() as f64);
        let mut out: Vec<Detection> = self
            .scene
            .persons()
            .iter()
            .filter_map(|p| {
                let (dx, dy) = self.offset(&p.person_id);
                let full = person_pano_box(geometry, p).translate(dx, dy);
                let visible = full.clip(w, h)?;
                let frac = visible.area() / full.area();
                (frac >= 0.5).then_some(Detection {
                    pano_box: visible,
                    score: frac as f32,
                })
            })
            .collect();
        out.sort_by(|a, b| a.pano_box.x.total_cmp(&b.pano_box.x));
        Ok(out)
    }
}
