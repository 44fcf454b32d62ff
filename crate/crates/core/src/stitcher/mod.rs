//! Cylindrical panorama stitching for frames with known pan/tilt.
//!
//! Each frame is lifted onto the cylinder with the pinhole model (no feature
//! registration: pan angles are commanded). Neighbouring tiles meet at a
//! hard vertical seam, placed at the angular midpoint unless a person mask
//! straddles it, in which case the seam moves to the nearest column clear of
//! every mask so each person is sourced from a single tile.

mod mask;
mod seam;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mask::{truth_masks, PersonMask};
pub use seam::Seam;

use crate::camsim::Frame;
use crate::projection::View;
use crate::raster::Raster;
use crate::scanplan::{CameraSpec, ScanPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StitchError {
    #[error("no tiles to composite")]
    NoTiles,
    #[error("tiles do not chain: gap between {left_deg:.3} and {right_deg:.3} deg")]
    GapError { left_deg: f64, right_deg: f64 },
    #[error("tiles must share one tilt row, got {0} and {1}")]
    MixedTilt(f64, f64),
    #[error("coordinate ({0:.2}, {1:.2}) out of bounds")]
    OutOfBounds(f64, f64),
    #[error("no tile for frame index {0}")]
    UnknownFrame(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StitchConfig {
    /// Output resolution; defaults to the camera's `width / hfov`.
    pub px_per_degree: Option<f64>,
    /// Pixels per unit cylinder height; defaults to the focal length.
    pub h_scale: Option<f64>,
    /// Re-estimate each tile's pan within `refine_range_deg` of its
    /// commanded value before compositing.
    pub refine_pan: bool,
    pub refine_range_deg: Option<f64>,
}

/// Where a tile sits on the cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGeometry {
    pub frame_index: usize,
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub camera: CameraSpec,
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

impl TileGeometry {
    pub fn new(frame_index: usize, camera: &CameraSpec, pan_deg: f64, tilt_deg: f64) -> Self {
        let view = View::new(camera, pan_deg, tilt_deg);
        let (w, h) = (camera.image_width_px as f64, camera.image_height_px as f64);
        const N: usize = 64;
        let mut phi_lo = f64::NEG_INFINITY;
        let mut phi_hi = f64::INFINITY;
        let mut h_lo = f64::NEG_INFINITY;
        let mut h_hi = f64::INFINITY;
        for k in 0..=N {
            let t = k as f64 / N as f64;
            phi_lo = phi_lo.max(view.pixel_to_cyl(0.0, t * h).0);
            phi_hi = phi_hi.min(view.pixel_to_cyl(w, t * h).0);
            h_lo = h_lo.max(view.pixel_to_cyl(t * w, 0.0).1);
            h_hi = h_hi.min(view.pixel_to_cyl(t * w, h).1);
        }
        TileGeometry {
            frame_index,
            pan_deg,
            tilt_deg,
            camera: camera.clone(),
            phi_lo,
            phi_hi,
            h_lo,
            h_hi,
        }
    }

    pub fn view(&self) -> View {
        View::new(&self.camera, self.pan_deg, self.tilt_deg)
    }
}

/// A frame lifted onto the cylinder. Resampling is lazy: [`CylTile::sample`]
/// maps a cylinder direction back into the frame and interpolates bilinearly.
#[derive(Debug, Clone)]
pub struct CylTile {
    pub geometry: TileGeometry,
    pub pixels: Raster,
    view: View,
}

impl CylTile {
    pub fn pixel_to_cyl(&self, u: f64, v: f64) -> (f64, f64) {
        self.view.pixel_to_cyl(u, v)
    }

    pub fn sample(&self, phi_deg: f64, h: f64) -> Option<f32> {
        let (u, v) = self.view.cyl_to_pixel(phi_deg, h)?;
        let (w, hh) = (self.pixels.width() as f64, self.pixels.height() as f64);
        (u >= 0.0 && u <= w && v >= 0.0 && v <= hh).then(|| self.pixels.sample_bilinear(u, v))
    }

    fn set_pan(&mut self, pan_deg: f64) {
        self.geometry = TileGeometry::new(
            self.geometry.frame_index,
            &self.geometry.camera,
            pan_deg,
            self.geometry.tilt_deg,
        );
        self.view = self.geometry.view();
    }
}

/// Lift `frame` (input position `frame_index`) onto the cylinder.
pub fn project_to_cylinder(frame_index: usize, frame: &Frame) -> CylTile {
    let geometry = TileGeometry::new(frame_index, &frame.camera, frame.pan_deg, frame.tilt_deg);
    let view = geometry.view();
    CylTile {
        geometry,
        pixels: frame.pixels.clone(),
        view,
    }
}

/// Linear angle/height to pixel mapping of a panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaGeometry {
    pub phi_min_deg: f64,
    pub phi_max_deg: f64,
    pub px_per_degree: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub h_scale: f64,
    pub width: u32,
    pub height: u32,
}

impl PanoramaGeometry {
    fn from_tiles(tiles: &[TileGeometry], cfg: &StitchConfig) -> Self {
        let cam = &tiles[0].camera;
        let phi_min = tiles.iter().map(|t| t.phi_lo).fold(f64::INFINITY, f64::min);
        let phi_max = tiles.iter().map(|t| t.phi_hi).fold(f64::NEG_INFINITY, f64::max);
        let h_min = tiles.iter().map(|t| t.h_lo).fold(f64::NEG_INFINITY, f64::max);
        let h_max = tiles.iter().map(|t| t.h_hi).fold(f64::INFINITY, f64::min);
        let ppd = cfg
            .px_per_degree
            .unwrap_or(cam.image_width_px as f64 / cam.hfov_deg);
        let h_scale = cfg.h_scale.unwrap_or_else(|| cam.focal_px());
        PanoramaGeometry {
            phi_min_deg: phi_min,
            phi_max_deg: phi_max,
            px_per_degree: ppd,
            h_min,
            h_max,
            h_scale,
            width: ((phi_max - phi_min) * ppd).round() as u32,
            height: ((h_max - h_min) * h_scale).floor().max(0.0) as u32,
        }
    }

    /// Geometry of the panorama that compositing a sweep over `plan` yields.
    pub fn for_plan(plan: &ScanPlan, camera: &CameraSpec, cfg: &StitchConfig) -> Self {
        let tiles: Vec<TileGeometry> = plan
            .waypoints
            .iter()
            .enumerate()
            .map(|(i, w)| TileGeometry::new(i, camera, w.pan_deg, w.tilt_deg))
            .collect();
        Self::from_tiles(&tiles, cfg)
    }

    pub fn phi_to_x(&self, phi_deg: f64) -> f64 {
        (phi_deg - self.phi_min_deg) * self.px_per_degree
    }

    pub fn x_to_phi(&self, x: f64) -> f64 {
        self.phi_min_deg + x / self.px_per_degree
    }

    pub fn h_to_y(&self, h: f64) -> f64 {
        (h - self.h_min) * self.h_scale
    }

    pub fn y_to_h(&self, y: f64) -> f64 {
        self.h_min + y / self.h_scale
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

#[derive(Debug, Clone)]
pub struct Panorama {
    pub pixels: Raster,
    pub geometry: PanoramaGeometry,
    pub sweep_id: u64,
    /// Tiles sorted by pan.
    pub tiles: Vec<TileGeometry>,
    pub seams: Vec<Seam>,
    /// Position in `tiles` of the tile sourcing each output column.
    column_tile: Vec<usize>,
}

/// JSON sidecar written next to an exported panorama PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaSidecar {
    pub sweep_id: u64,
    #[serde(flatten)]
    pub geometry: PanoramaGeometry,
    pub seams: Vec<Seam>,
    pub tiles: Vec<TileGeometry>,
}

impl Panorama {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Frame index that sourced output column `x`.
    pub fn column_source(&self, x: u32) -> usize {
        self.tiles[self.column_tile[x as usize]].frame_index
    }

    pub fn pano_to_frame(&self, x: f64, y: f64) -> Result<(usize, f64, f64), StitchError> {
        if !self.geometry.contains(x, y) {
            return Err(StitchError::OutOfBounds(x, y));
        }
        let tile = &self.tiles[self.column_tile[x.floor() as usize]];
        let (u, v) = tile
            .view()
            .cyl_to_pixel(self.geometry.x_to_phi(x), self.geometry.y_to_h(y))
            .ok_or(StitchError::OutOfBounds(x, y))?;
        Ok((tile.frame_index, u, v))
    }

    pub fn frame_to_pano(&self, frame_index: usize, u: f64, v: f64) -> Result<(f64, f64), StitchError> {
        let tile = self
            .tiles
            .iter()
            .find(|t| t.frame_index == frame_index)
            .ok_or(StitchError::UnknownFrame(frame_index))?;
        let (w, h) = (tile.camera.image_width_px as f64, tile.camera.image_height_px as f64);
        if !(u >= 0.0 && u <= w && v >= 0.0 && v <= h) {
            return Err(StitchError::OutOfBounds(u, v));
        }
        let (phi, hh) = tile.view().pixel_to_cyl(u, v);
        let (x, y) = (self.geometry.phi_to_x(phi), self.geometry.h_to_y(hh));
        if !self.geometry.contains(x, y) {
            return Err(StitchError::OutOfBounds(x, y));
        }
        Ok((x, y))
    }

    /// Azimuth of panorama column coordinate `x`.
    pub fn azimuth_at(&self, x: f64) -> f64 {
        self.geometry.x_to_phi(x)
    }

    pub fn sidecar(&self) -> PanoramaSidecar {
        PanoramaSidecar {
            sweep_id: self.sweep_id,
            geometry: self.geometry.clone(),
            seams: self.seams.clone(),
            tiles: self.tiles.clone(),
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        self.pixels.to_png()
    }

    /// Write `<stem>.png` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.png")), self.to_png())?;
        let json = serde_json::to_vec_pretty(&self.sidecar()).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)
    }
}

/// Nudge each tile's pan (left to right, the first tile anchoring) to the
/// offset within `range_deg` that best aligns it with its left neighbour.
pub fn refine_pan_offsets(tiles: &mut [CylTile], range_deg: f64) {
    tiles.sort_by(|a, b| a.geometry.pan_deg.total_cmp(&b.geometry.pan_deg));
    for k in 1..tiles.len() {
        let (left, right) = tiles.split_at_mut(k);
        let a = &left[k - 1];
        let b = &mut right[0];
        let lo = b.geometry.phi_lo + range_deg;
        let hi = a.geometry.phi_hi - range_deg;
        if hi <= lo {
            continue;
        }
        let h_lo = a.geometry.h_lo.max(b.geometry.h_lo) * 0.9;
        let h_hi = a.geometry.h_hi.min(b.geometry.h_hi) * 0.9;
        let samples: Vec<(f64, f64, f32)> = (0..48)
            .flat_map(|i| (0..24).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let phi = lo + (hi - lo) * (i as f64 + 0.5) / 48.0;
                let h = h_lo + (h_hi - h_lo) * (j as f64 + 0.5) / 24.0;
                a.sample(phi, h).map(|v| (phi, h, v))
            })
            .collect();
        let base = b.geometry.pan_deg;
        let steps = (range_deg / 0.01).round() as i64;
        let mut best = (f64::INFINITY, 0.0);
        for s in -steps..=steps {
            let delta = s as f64 * 0.01;
            let mut probe = b.clone();
            probe.set_pan(base + delta);
            let (mut sum, mut n) = (0.0, 0usize);
            for &(phi, h, va) in &samples {
                if let Some(vb) = probe.sample(phi, h) {
                    sum += (va - vb).abs() as f64;
                    n += 1;
                }
            }
            if n > 0 && sum / (n as f64) < best.0 {
                best = (sum / n as f64, delta);
            }
        }
        b.set_pan(base + best.1);
    }
}

/// Composite tiles into a panorama tagged with `sweep_id`.
pub fn composite(
    mut tiles: Vec<CylTile>,
    masks: &[PersonMask],
    cfg: &StitchConfig,
    sweep_id: u64,
) -> Result<Panorama, StitchError> {
    if tiles.is_empty() {
        return Err(StitchError::NoTiles);
    }
    let tilt0 = tiles[0].geometry.tilt_deg;
    if let Some(t) = tiles.iter().find(|t| (t.geometry.tilt_deg - tilt0).abs() > 1e-9) {
        return Err(StitchError::MixedTilt(tilt0, t.geometry.tilt_deg));
    }
    if cfg.refine_pan {
        refine_pan_offsets(&mut tiles, cfg.refine_range_deg.unwrap_or(0.5));
    }
    tiles.sort_by(|a, b| {
        a.geometry
            .pan_deg
            .total_cmp(&b.geometry.pan_deg)
            .then(a.geometry.frame_index.cmp(&b.geometry.frame_index))
    });
    let geoms: Vec<TileGeometry> = tiles.iter().map(|t| t.geometry.clone()).collect();
    for pair in geoms.windows(2) {
        if pair[1].phi_lo > pair[0].phi_hi + 1e-9 {
            return Err(StitchError::GapError {
                left_deg: pair[0].phi_hi,
                right_deg: pair[1].phi_lo,
            });
        }
    }
    let geometry = PanoramaGeometry::from_tiles(&geoms, cfg);
    let footprints = seam::mask_footprints(&geometry, &geoms, masks);
    let seams = seam::place_seams(&geometry, &geoms, &footprints)?;

    let mut column_tile = vec![0usize; geometry.width as usize];
    let mut current = 0;
    for (x, slot) in column_tile.iter_mut().enumerate() {
        while current < seams.len() && x as u32 >= seams[current].column {
            current += 1;
        }
        *slot = current;
    }

    let (w, h) = (geometry.width, geometry.height);
    let mut data = vec![0f32; w as usize * h as usize];
    data.par_chunks_mut(w.max(1) as usize)
        .enumerate()
        .for_each(|(y, row)| {
            let hh = geometry.y_to_h(y as f64 + 0.5);
            for (x, out) in row.iter_mut().enumerate() {
                let phi = geometry.x_to_phi(x as f64 + 0.5);
                let t = column_tile[x];
                *out = tiles[t]
                    .sample(phi, hh)
                    .or_else(|| tiles.iter().find_map(|o| o.sample(phi, hh)))
                    .unwrap_or(0.0);
            }
        });

    Ok(Panorama {
        pixels: Raster::from_vec(w, h, data),
        geometry,
        sweep_id,
        tiles: geoms,
        seams,
        column_tile,
    })
}

#[cfg(test)]
mod tests;
