//! Dense float images and the PNG/PFM encoders used for exports.

use std::io::Cursor;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

/// Row-major, channel-interleaved float image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size");
        Self { width, height, channels, data }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// 8-bit PNG; values are clamped to [0, 1]. One channel becomes gray,
    /// three or more use the first three as RGB.
    pub fn to_png(&self) -> Vec<u8> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let mut buf = Cursor::new(Vec::new());
        if self.channels >= 3 {
            let img = ImageBuffer::<Rgb<u8>, _>::from_fn(w, h, |x, y| {
                let p = self.pixel(x as usize, y as usize);
                Rgb([q(p[0]), q(p[1]), q(p[2])])
            });
            img.write_to(&mut buf, ImageFormat::Png).expect("png encode");
        } else {
            let img = ImageBuffer::<Luma<u8>, _>::from_fn(w, h, |x, y| Luma([q(self.pixel(x as usize, y as usize)[0])]));
            img.write_to(&mut buf, ImageFormat::Png).expect("png encode");
        }
        buf.into_inner()
    }

    /// Reads an 8-bit PNG into a float image with values in [0, 1].
    pub fn from_png(bytes: &[u8], channels: usize) -> Result<Image, image::ImageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(w, h, channels);
        for (x, y, px) in img.enumerate_pixels() {
            let dst = out.pixel_mut(x as usize, y as usize);
            for (c, d) in dst.iter_mut().enumerate() {
                *d = px.0[c.min(2)] as f64 / 255.0;
            }
        }
        Ok(out)
    }
}

/// 8-bit RGB raster with an exact zero background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&c);
    }

    pub fn nonzero_pixels(&self) -> usize {
        self.data.chunks_exact(3).filter(|p| p.iter().any(|&v| v != 0)).count()
    }

    pub fn contains_color(&self, c: [u8; 3]) -> bool {
        self.data.chunks_exact(3).any(|p| p == c)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size");
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png).expect("png encode");
        buf.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, image::ImageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        Ok(Self { width: img.width() as usize, height: img.height() as usize, data: img.into_raw() })
    }

    /// Channel values scaled to [0, 1].
    pub fn to_float(&self) -> Image {
        Image::from_data(self.width, self.height, 3, self.data.iter().map(|&v| v as f64 / 255.0).collect())
    }
}

pub(crate) fn png16(width: usize, height: usize, data: &[u16]) -> Vec<u8> {
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(width as u32, height as u32, data.to_vec()).expect("buffer size");
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("png encode");
    buf.into_inner()
}
