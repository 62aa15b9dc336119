//! RGB images with `f64` channels in `[0, 1]`, plus 8-bit PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Build an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Largest absolute per-channel difference.
    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.same_size(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Bilinear lookup with clamp-to-edge addressing.
    ///
    /// `(u, v)` follow the OBJ texture convention: `v = 0` is the bottom row.
    pub fn sample_uv(&self, u: f64, v: f64) -> [f64; 3] {
        if self.width == 0 || self.height == 0 {
            return [0.0; 3];
        }
        let x = u * self.width as f64 - 0.5;
        let y = (1.0 - v) * self.height as f64 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let clamp_x = |i: f64| (i.max(0.0) as usize).min(self.width - 1);
        let clamp_y = |i: f64| (i.max(0.0) as usize).min(self.height - 1);
        let (xa, xb) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (ya, yb) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let p00 = self.pixel(xa, ya);
        let p10 = self.pixel(xb, ya);
        let p01 = self.pixel(xa, yb);
        let p11 = self.pixel(xb, yb);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

/// Round a `[0, 1]` value to the nearest 8-bit level.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Load an 8-bit grayscale PNG; values `>= 128` are `true`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let data = img.as_raw().iter().map(|&b| b >= 128).collect();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_sample_is_exact_at_texel_centers() {
        let img = Image::from_fn(4, 2, |x, y| [x as f64 / 3.0, y as f64, 0.25]);
        // texel (1, 0): u = 1.5/4, v = 1 - 0.5/2
        let p = img.sample_uv(1.5 / 4.0, 0.75);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!(p[1].abs() < 1e-12);
        // halfway between the two rows
        let p = img.sample_uv(1.5 / 4.0, 0.5);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(3, 2, |x, y| [x as f64 / 2.0, y as f64, 0.5]);
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert!(img.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn mask_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let g = image::GrayImage::from_raw(3, 1, vec![0, 127, 128]).unwrap();
        g.save(&path).unwrap();
        let m = BinaryImage::load_png(&path).unwrap();
        assert!(!m.get(0, 0) && !m.get(1, 0) && m.get(2, 0));
    }
}
