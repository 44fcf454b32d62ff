use serde::{Deserialize, Serialize};

use super::{PanoramaGeometry, PersonMask, StitchError, TileGeometry};

/// Boundary between two neighbouring tiles: columns left of `column` come
/// from `left_frame`, columns from `column` on from `right_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seam {
    pub left_frame: usize,
    pub right_frame: usize,
    /// Column of the angular midpoint between the two tile centers.
    pub default_column: u32,
    pub column: u32,
    /// Moved off the midpoint to clear a person mask.
    pub displaced: bool,
    /// No mask-free column existed in the overlap; the midpoint was kept.
    pub conflict: bool,
}

/// Panorama column span `[start, end)` covered by each mask, dilated by one
/// column on both sides.
pub(super) fn mask_footprints(
    geometry: &PanoramaGeometry,
    tiles: &[TileGeometry],
    masks: &[PersonMask],
) -> Vec<(i64, i64)> {
    masks
        .iter()
        .filter_map(|m| {
            let tile = tiles.iter().find(|t| t.frame_index == m.frame_index)?;
            let view = tile.view();
            let b = m.bbox;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for v in [b.y, b.y + b.h / 2.0, b.bottom()] {
                for u in [b.x, b.right()] {
                    let phi = view.pixel_to_cyl(u, v).0;
                    lo = lo.min(phi);
                    hi = hi.max(phi);
                }
            }
            Some((
                geometry.phi_to_x(lo).floor() as i64 - 1,
                geometry.phi_to_x(hi).ceil() as i64 + 1,
            ))
        })
        .collect()
}

pub(super) fn place_seams(
    geometry: &PanoramaGeometry,
    tiles: &[TileGeometry],
    footprints: &[(i64, i64)],
) -> Result<Vec<Seam>, StitchError> {
    let ppd = geometry.px_per_degree;
    let blocked = |c: i64| footprints.iter().any(|&(a, b)| a < c && c < b);
    let mut seams = Vec::with_capacity(tiles.len().saturating_sub(1));
    let mut floor_col: i64 = 0;
    for pair in tiles.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        // Columns >= lo have centers inside `b`; columns < hi inside `a`.
        let lo = (((b.phi_lo - geometry.phi_min_deg) * ppd - 0.5).ceil() as i64).max(floor_col);
        let hi = ((((a.phi_hi - geometry.phi_min_deg) * ppd - 0.5).floor() as i64) + 1)
            .min(geometry.width as i64);
        if lo > hi {
            return Err(StitchError::GapError {
                left_deg: a.phi_hi,
                right_deg: b.phi_lo,
            });
        }
        let mid = (a.pan_deg + b.pan_deg) / 2.0;
        let c0 = ((geometry.phi_to_x(mid)).round() as i64).clamp(lo, hi);
        let mut chosen = None;
        for d in 0..=(hi - lo) {
            if let Some(c) = [c0 - d, c0 + d]
                .into_iter()
                .find(|&c| c >= lo && c <= hi && !blocked(c))
            {
                chosen = Some(c);
                break;
            }
        }
        let column = chosen.unwrap_or(c0);
        floor_col = column;
        seams.push(Seam {
            left_frame: a.frame_index,
            right_frame: b.frame_index,
            default_column: c0 as u32,
            column: column as u32,
            displaced: column != c0,
            conflict: chosen.is_none(),
        });
    }
    Ok(seams)
}
