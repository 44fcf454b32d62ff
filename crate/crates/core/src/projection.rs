//! Ray geometry shared by the simulator and the stitcher.
//!
//! World directions are parameterized on a unit cylinder around the
//! camera's pan axis: azimuth `phi` (degrees) and height `h`, where a
//! direction `(x, y, z)` has `phi = atan2(x, z)` and `h = y / hypot(x, z)`.
//! `h` grows downward, matching image rows, so elevation `e` sits at
//! `h = tan(e)`.
//!
//! A camera at `(pan, tilt)` sees pixel `(u, v)` along
//! `R_pan * R_tilt * (u - cx, v - cy, f)`. With zero tilt this reduces to
//! `phi = pan + atan2(u - cx, f)` and `h = (v - cy) / hypot(u - cx, f)`.

use crate::scanplan::CameraSpec;

/// Intrinsics and pose needed to map between pixels and the cylinder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl View {
    pub fn new(camera: &CameraSpec, pan_deg: f64, tilt_deg: f64) -> Self {
        View {
            pan_deg,
            tilt_deg,
            focal_px: camera.focal_px(),
            cx: camera.cx(),
            cy: camera.cy(),
        }
    }

    pub fn pixel_to_cyl(&self, u: f64, v: f64) -> (f64, f64) {
        let x = u - self.cx;
        let y = v - self.cy;
        let z = self.focal_px;
        let (yt, zt) = if self.tilt_deg == 0.0 {
            (y, z)
        } else {
            let (s, c) = self.tilt_deg.to_radians().sin_cos();
            (y * c + z * s, -y * s + z * c)
        };
        let phi = self.pan_deg + x.atan2(zt).to_degrees();
        (phi, yt / x.hypot(zt))
    }

    /// Pixel hit by the cylinder direction `(phi, h)`, or `None` when the
    /// direction lies behind the image plane.
    pub fn cyl_to_pixel(&self, phi_deg: f64, h: f64) -> Option<(f64, f64)> {
        let (sx, cz) = (phi_deg - self.pan_deg).to_radians().sin_cos();
        let (x, yt, zt) = (sx, h, cz);
        let (y, z) = if self.tilt_deg == 0.0 {
            (yt, zt)
        } else {
            let (s, c) = self.tilt_deg.to_radians().sin_cos();
            (yt * c - zt * s, yt * s + zt * c)
        };
        if z <= 1e-12 {
            return None;
        }
        Some((
            self.cx + self.focal_px * x / z,
            self.cy + self.focal_px * y / z,
        ))
    }
}
