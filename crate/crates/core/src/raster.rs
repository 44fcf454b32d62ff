//! Single-channel floating point raster with PNG import/export.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};
use sha2::{Digest, Sha256};

use crate::geometry::BoxPx;

/// Grayscale image, row-major, intensities on a 0..=255 scale.
///
/// Pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)`; its center sits at
/// `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32) -> Self {
        Raster {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Bilinear sample at continuous coordinates; edges are clamped.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f32 {
        let fx = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let lerp = |a: f32, b: f32, t: f32| if a == b { a } else { a + (b - a) * t };
        let top = lerp(self.get(x0, y0), self.get(x1, y0), tx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), tx);
        lerp(top, bottom, ty)
    }

    /// Copy of the pixels covered by `b`, after rounding its edges to the
    /// pixel grid and clipping to the raster. Empty when nothing overlaps.
    pub fn crop(&self, b: &BoxPx) -> Raster {
        let x0 = b.x.round().max(0.0) as u32;
        let y0 = b.y.round().max(0.0) as u32;
        let x1 = (b.right().round().max(0.0) as u32).min(self.width);
        let y1 = (b.bottom().round().max(0.0) as u32).min(self.height);
        if x1 <= x0 || y1 <= y0 {
            return Raster::new(0, 0);
        }
        Raster::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn to_gray8(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width, self.height);
        for (dst, src) in img.pixels_mut().zip(&self.data) {
            *dst = Luma([src.round().clamp(0.0, 255.0) as u8]);
        }
        img
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_gray8()
            .write_to(&mut buf, ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        buf.into_inner()
    }

    /// Decode any supported image (PNG in this build) into a grayscale raster.
    pub fn from_image_bytes(bytes: &[u8]) -> Result<Raster, image::ImageError> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(f32::from).collect();
        Ok(Raster::from_vec(w, h, data))
    }

    /// SHA-256 over dimensions and 8-bit quantized pixels, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(self.to_gray8().as_raw());
        hex::encode(hasher.finalize())
    }
}
