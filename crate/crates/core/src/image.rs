//! Raster container and elementary raster operations.
//!
//! Samples are stored row-major, interleaved by channel, as unit-interval
//! `f64`. Conversion from 8-bit happens once, at construction.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("zero image dimension")]
    ZeroDimension,
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("sample buffer has {got} values, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sample {value} at index {index} outside [0, 1]")]
    SampleOutOfRange { index: usize, value: f64 },
    #[error("crop window {y}+{h} x {x}+{w} exceeds image bounds")]
    CropOutOfBounds {
        y: usize,
        x: usize,
        h: usize,
        w: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Validates shape and sample range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::ZeroDimension);
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannels(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::SampleOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Clamps every sample into `[0, 1]` (NaN becomes 0) instead of rejecting.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self, ImageError> {
        for v in data.iter_mut() {
            *v = clamp01(*v);
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Maps 8-bit samples to `[0, 1]` by division by 255.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(height, width, channels, data)
    }

    /// Quantizes to 8-bit with round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| math::round(clamp01(v) * 255.0) as u8)
            .collect()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        math::mean(&self.data)
    }

    /// Applies `f` to every sample and clamps the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp01(f(v))).collect(),
        }
    }

    /// Single channel `c` as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image, ImageError> {
        if h == 0 || w == 0 {
            return Err(ImageError::ZeroDimension);
        }
        if y + h > self.height || x + w > self.width {
            return Err(ImageError::CropOutOfBounds { y, x, h, w });
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for row in y..y + h {
            let start = self.index(row, x, 0);
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    /// Columns reversed.
    pub fn flip_horizontal(&self) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = self.index(y, x, 0);
                data.extend_from_slice(&self.data[i..i + c]);
            }
        }
        Image {
            data,
            ..self.clone_shape()
        }
    }

    /// Three-channel view: grayscale is replicated, RGB returned as is.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Square tiles of side `side` on a `stride` grid, row by row.
    pub fn tiles(&self, side: usize, stride: usize) -> Result<Vec<Image>, ImageError> {
        if side == 0 || stride == 0 {
            return Err(ImageError::ZeroDimension);
        }
        if side > self.height || side > self.width {
            return Err(ImageError::CropOutOfBounds {
                y: 0,
                x: 0,
                h: side,
                w: side,
            });
        }
        let mut out = Vec::new();
        let mut y = 0;
        while y + side <= self.height {
            let mut x = 0;
            while x + side <= self.width {
                out.push(self.crop(y, x, side, side)?);
                x += stride;
            }
            y += stride;
        }
        Ok(out)
    }

    fn clone_shape(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: Vec::new(),
        }
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    clamp01(LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b)
}

/// One-channel luma image. Grayscale input is returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
    Image {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Bilinear resize with half-pixel-centre sampling and edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image, ImageError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let c = img.channels;
    let ys: Vec<(usize, usize, f64)> = (0..out_h).map(|y| source_coord(y, img.height, out_h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|x| source_coord(x, img.width, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bottom = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                data.push(clamp01(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Ok(Image {
        height: out_h,
        width: out_w,
        channels: c,
        data,
    })
}

fn source_coord(out: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = math::floor(s) as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}
