//! Float images in HWC layout.
//!
//! [`RasterImage`] carries rendered sketches, photographs and masked
//! composites (values in `[0, 1]`) as well as per-pixel loss gradients, which
//! share the layout but not the range.

use std::path::Path;

use image::{imageops::FilterType, DynamicImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Working resolution used by the encoders.
pub const WORKING_RESOLUTION: u32 = 224;

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Per-pixel derivative of a scalar loss with respect to an image.
pub type PixelGradient = RasterImage;

impl RasterImage {
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels > 0, "an image needs at least one channel");
        RasterImage { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn white(width: usize, height: usize) -> Self {
        Self::filled(width, height, 3, 1.0)
    }

    pub fn zeros_like(other: &RasterImage) -> Self {
        Self::filled(other.width, other.height, other.channels, 0.0)
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}x{channels} = {} values", width * height * channels),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(RasterImage { width, height, channels, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        RasterImage { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
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
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &RasterImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", self.width, self.height, self.channels),
                actual: format!("{}x{}x{}", other.width, other.height, other.channels),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rec. 601 luma for RGB images; single-channel images are returned as is.
    pub fn to_gray(&self) -> RasterImage {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
                RasterImage { width: self.width, height: self.height, channels: 1, data }
            }
            c => {
                let data = self.data.chunks_exact(c).map(|p| p.iter().sum::<f64>() / c as f64).collect();
                RasterImage { width: self.width, height: self.height, channels: 1, data }
            }
        }
    }

    pub fn to_rgb(&self) -> RasterImage {
        match self.channels {
            3 => self.clone(),
            1 => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                RasterImage { width: self.width, height: self.height, channels: 3, data }
            }
            _ => self.to_gray().to_rgb(),
        }
    }

    pub fn scaled(&self, factor: f64) -> RasterImage {
        RasterImage { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    pub fn add_scaled(&mut self, other: &RasterImage, factor: f64) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn mean_abs_diff(&self, other: &RasterImage) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let rgb = self.to_rgb();
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = rgb.index(x as usize, y as usize, 0);
            Rgb([to_u8(rgb.data[i]), to_u8(rgb.data[i + 1]), to_u8(rgb.data[i + 2])])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> RasterImage {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        RasterImage { width: w as usize, height: h as usize, channels: 3, data }
    }

    pub fn from_dynamic(img: &DynamicImage) -> RasterImage {
        Self::from_rgb8(&img.to_rgb8())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RasterImage> {
        Ok(Self::from_dynamic(&image::open(path)?))
    }

    /// Loads an image and resamples it to `size`×`size` with a triangle filter.
    pub fn load_resized(path: impl AsRef<Path>, size: u32) -> Result<RasterImage> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&resize_rgb8(&img, size, size)))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Resample through 8-bit RGB with a triangle filter.
    pub fn resized(&self, width: u32, height: u32) -> RasterImage {
        Self::from_rgb8(&resize_rgb8(&self.to_rgb8(), width, height))
    }
}

fn resize_rgb8(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        img.clone()
    } else {
        image::imageops::resize(img, width, height, FilterType::Triangle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_of_white_is_one() {
        let g = RasterImage::white(3, 2).to_gray();
        assert_eq!(g.channels(), 1);
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(RasterImage::from_vec(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(RasterImage::from_vec(2, 2, 3, vec![0.0; 12]).is_ok());
    }

    #[test]
    fn rgb8_round_trip_is_exact_on_quantized_values() {
        let img = RasterImage::from_fn(4, 3, 3, |x, y, c| ((x * 7 + y * 13 + c * 29) % 256) as f64 / 255.0);
        let back = RasterImage::from_rgb8(&img.to_rgb8());
        assert!(img.mean_abs_diff(&back).unwrap() < 1e-12);
    }
}
