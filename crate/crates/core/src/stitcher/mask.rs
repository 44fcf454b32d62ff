use serde::{Deserialize, Serialize};

use crate::camsim::Frame;
use crate::geometry::BoxPx;

/// Binary person mask aligned to one input frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonMask {
    pub frame_index: usize,
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
    /// Tight bound of the set pixels.
    pub bbox: BoxPx,
}

impl PersonMask {
    /// Build from a raw bitmap; `None` if no pixel is set.
    pub fn from_bits(frame_index: usize, width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        assert_eq!(bits.len(), width as usize * height as usize);
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for y in 0..height {
            for x in 0..width {
                if bits[(y * width + x) as usize] {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| PersonMask {
            frame_index,
            width,
            height,
            bits,
            bbox: BoxPx::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64),
        })
    }

    /// Ellipse inscribed in `b`, rasterized at pixel centers.
    pub fn from_ellipse(frame_index: usize, width: u32, height: u32, b: &BoxPx) -> Option<Self> {
        let (cx, cy) = b.center();
        let (rx, ry) = (b.w / 2.0, b.h / 2.0);
        if rx <= 0.0 || ry <= 0.0 {
            return None;
        }
        let mut bits = vec![false; width as usize * height as usize];
        let xs = (b.x.floor().max(0.0) as u32)..(b.right().ceil().min(width as f64) as u32);
        let ys = (b.y.floor().max(0.0) as u32)..(b.bottom().ceil().min(height as f64) as u32);
        for y in ys {
            for x in xs.clone() {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    bits[(y * width + x) as usize] = true;
                }
            }
        }
        Self::from_bits(frame_index, width, height, bits)
    }

    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Stand-in segmentation: the frame's ground-truth boxes as ellipses.
pub fn truth_masks(frame_index: usize, frame: &Frame) -> Vec<PersonMask> {
    let (w, h) = (frame.pixels.width(), frame.pixels.height());
    frame
        .truth
        .iter()
        .filter_map(|t| PersonMask::from_ellipse(frame_index, w, h, &t.bbox))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_is_tight() {
        let m = PersonMask::from_ellipse(0, 20, 20, &BoxPx::new(2.0, 3.0, 8.0, 6.0)).unwrap();
        assert_eq!(m.bbox, BoxPx::new(2.0, 3.0, 8.0, 6.0));
        let (xs, ys): (Vec<u32>, Vec<u32>) = m.set_pixels().unzip();
        assert_eq!(*xs.iter().min().unwrap() as f64, m.bbox.x);
        assert_eq!(*ys.iter().max().unwrap() as f64 + 1.0, m.bbox.bottom());
    }

    #[test]
    fn empty_mask_is_none() {
        assert!(PersonMask::from_bits(0, 3, 3, vec![false; 9]).is_none());
        assert!(PersonMask::from_ellipse(0, 10, 10, &BoxPx::new(20.0, 20.0, 4.0, 4.0)).is_none());
    }
}
