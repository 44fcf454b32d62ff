//! Procedural face texture.
//!
//! Each simulated face is a 4x4 grid of cells over its angular box. A cell
//! whose bit is set carries a smooth bright plateau, otherwise it stays at
//! the dark base level. The 16 bits are the low bits of the person's
//! appearance seed, so the fixture embedder can recover the identity from
//! pixels that went through capture, stitching and cropping.

use crate::raster::Raster;
use crate::roster::Pose;

pub const GRID: usize = 4;
pub const BASE_LEVEL: f32 = 70.0;
pub const PEAK_LEVEL: f32 = 180.0;
const EDGE_MARGIN: f64 = 0.08;
/// Half width of the flat top of a cell bump, in cell units.
const PLATEAU: f64 = 0.2;

pub fn code_for_seed(appearance_seed: u64) -> u16 {
    (appearance_seed & 0xFFFF) as u16
}

fn edge_weight(t: f64) -> f64 {
    let d = t.min(1.0 - t);
    if d >= EDGE_MARGIN {
        1.0
    } else if d <= 0.0 {
        0.0
    } else {
        (std::f64::consts::FRAC_PI_2 * d / EDGE_MARGIN).sin().powi(2)
    }
}

/// 1 on the plateau around the cell center, cos^2 falloff to 0 at the cell border.
fn bump(local: f64) -> f64 {
    let d = (local - 0.5).abs();
    if d <= PLATEAU {
        1.0
    } else {
        let t = (d - PLATEAU) / (0.5 - PLATEAU);
        (std::f64::consts::FRAC_PI_2 * t.min(1.0)).cos().powi(2)
    }
}

/// Blend weight against the background and pattern intensity at face-local
/// coordinates `(sx, sy)` in `[0, 1]^2`.
pub fn pattern(code: u16, sx: f64, sy: f64) -> (f64, f64) {
    let w = edge_weight(sx) * edge_weight(sy);
    let gx = (sx * GRID as f64).clamp(0.0, GRID as f64 - 1e-9);
    let gy = (sy * GRID as f64).clamp(0.0, GRID as f64 - 1e-9);
    let (ci, cj) = (gx.floor() as usize, gy.floor() as usize);
    let bit = (code >> (cj * GRID + ci)) & 1;
    let level = if bit == 1 {
        BASE_LEVEL as f64
            + (PEAK_LEVEL - BASE_LEVEL) as f64 * bump(gx - ci as f64) * bump(gy - cj as f64)
    } else {
        BASE_LEVEL as f64
    };
    (w, level)
}

/// Read the 16-bit code back from a crop that spans the face box.
/// `None` if the crop is too small to resolve the grid.
pub fn decode(crop: &Raster) -> Option<u16> {
    let (w, h) = (crop.width() as f64, crop.height() as f64);
    if w < 8.0 || h < 8.0 {
        return None;
    }
    let threshold = (BASE_LEVEL + PEAK_LEVEL) / 2.0;
    let mut code = 0u16;
    for cj in 0..GRID {
        for ci in 0..GRID {
            let u = (ci as f64 + 0.5) / GRID as f64 * w;
            let v = (cj as f64 + 0.5) / GRID as f64 * h;
            if crop.sample_bilinear(u, v) > threshold {
                code |= 1 << (cj * GRID + ci);
            }
        }
    }
    Some(code)
}

/// Enrollment photo of a simulated person. Side views get a lighting ramp
/// and `variant`-seeded speckle, so every photo has distinct bytes.
pub fn render_face_photo(appearance_seed: u64, pose: Pose, variant: u32, size_px: u32) -> Raster {
    let code = code_for_seed(appearance_seed);
    let background = 118.0;
    let mut state = appearance_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((variant as u64).wrapping_mul(0xD1B5_4A32_D192_ED03) + matches!(pose, Pose::Side) as u64);
    let mut next_noise = move || {
        // xorshift64*
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        let r = state.wrapping_mul(0x2545_F491_4F6C_DD1D);
        (r >> 40) as f64 / (1u64 << 24) as f64 - 0.5
    };
    Raster::from_fn(size_px, size_px, |x, y| {
        let sx = (x as f64 + 0.5) / size_px as f64;
        let sy = (y as f64 + 0.5) / size_px as f64;
        let (wgt, level) = pattern(code, sx, sy);
        let mut v = background * (1.0 - wgt) + level * wgt;
        if pose == Pose::Side {
            v += (sx - 0.5) * 24.0 + next_noise() * 6.0;
        } else {
            v += next_noise() * 2.0;
        }
        v.clamp(0.0, 255.0) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn photos_decode_to_their_code() {
        for seed in [0u64, 1, 0xBEEF, 0x1_2345, u64::MAX] {
            for (pose, variant) in [(Pose::Front, 0), (Pose::Side, 1), (Pose::Side, 2)] {
                let img = render_face_photo(seed, pose, variant, 48);
                assert_eq!(decode(&img), Some(code_for_seed(seed)));
            }
        }
    }

    #[test]
    fn side_variants_differ() {
        let a = render_face_photo(7, Pose::Side, 1, 32);
        let b = render_face_photo(7, Pose::Side, 2, 32);
        assert_ne!(a, b);
    }

    #[test]
    fn tiny_crop_is_undecodable() {
        assert_eq!(decode(&Raster::new(5, 20)), None);
    }

    #[test]
    fn decode_tolerates_a_shifted_crop() {
        let img = render_face_photo(0xA5C3, Pose::Front, 0, 40);
        let shifted = Raster::from_fn(40, 40, |x, y| img.get((x + 2).min(39), (y + 1).min(39)));
        assert_eq!(decode(&shifted), Some(0xA5C3));
    }
}
