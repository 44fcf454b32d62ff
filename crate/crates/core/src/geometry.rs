//! Axis-aligned boxes in pixel space.

use serde::{Deserialize, Serialize};

/// Axis-aligned box `(x, y, w, h)` in continuous pixel coordinates, where
/// pixel `i` covers `[i, i + 1)`. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxPx {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BoxPx {
    fn from(v: [f64; 4]) -> Self {
        BoxPx::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoxPx> for [f64; 4] {
    fn from(b: BoxPx) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BoxPx {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoxPx { x, y, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BoxPx::new(x0.min(x1), y0.min(y1), (x1 - x0).abs(), (y1 - y0).abs())
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Half-open containment: left/top edges inclusive, right/bottom exclusive.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn intersection(&self, other: &BoxPx) -> Option<BoxPx> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BoxPx::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn iou(&self, other: &BoxPx) -> f64 {
        let inter = self.intersection(other).map_or(0.0, |b| b.area());
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clip to `[0, width) x [0, height)`; `None` when nothing remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoxPx> {
        self.intersection(&BoxPx::new(0.0, 0.0, width, height))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoxPx {
        BoxPx::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BoxPx::new(3.0, 4.0, 10.0, 5.0);
        assert_eq!(b.iou(&b), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = BoxPx::new(0.0, 0.0, 1.0, 1.0);
        let b = BoxPx::new(2.0, 2.0, 1.0, 1.0);
        assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn iou_half_shift() {
        let a = BoxPx::new(0.0, 0.0, 2.0, 1.0);
        let b = BoxPx::new(1.0, 0.0, 2.0, 1.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn contains_is_half_open() {
        let b = BoxPx::new(0.0, 0.0, 2.0, 2.0);
        assert!(b.contains(0.0, 0.0));
        assert!(!b.contains(2.0, 1.0));
    }

    #[test]
    fn serializes_as_array() {
        let b = BoxPx::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
    }
}
