//! Augmentation "noises" used to perturb encoder fine-tuning.
//!
//! Five transform families, fourteen catalog parameterisations. Every
//! transform takes an explicit [`Rng`] so a given (spec, image, stream) always
//! produces the same output.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::image::{clamp01, luma, resize_bilinear, Image, ImageError};
use crate::math;
use crate::rng::Rng;

/// Area fraction range sampled by [`random_resized_crop`].
pub const CROP_AREA_RANGE: (f64, f64) = (0.08, 1.0);
/// Aspect ratio range (width / height) sampled log-uniformly.
pub const CROP_RATIO_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("blur kernel {0} is even")]
    EvenKernel(usize),
    #[error("blur kernel {kernel} larger than image side {side}")]
    KernelLargerThanImage { kernel: usize, side: usize },
    #[error("hue amplitude {0} outside [0, 0.5]")]
    HueOutOfRange(f64),
    #[error("invalid noise parameter: {0}")]
    InvalidParameter(String),
    #[error("zero output dimension")]
    ZeroDimension,
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    GaussianBlur,
    RandomHorizontalFlip,
    RandomGrayscale,
    ColorJitter,
    RandomResizedCrop,
}

/// One augmentation with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum NoiseSpec {
    GaussianBlur { kernel: usize },
    RandomHorizontalFlip { p: f64 },
    RandomGrayscale { p: f64 },
    ColorJitter { brightness: f64, hue: f64 },
    RandomResizedCrop { side: usize },
}

/// The fourteen catalog noises, in catalog order.
pub const CATALOG: [NoiseSpec; 14] = [
    NoiseSpec::GaussianBlur { kernel: 3 },
    NoiseSpec::GaussianBlur { kernel: 13 },
    NoiseSpec::GaussianBlur { kernel: 39 },
    NoiseSpec::RandomHorizontalFlip { p: 0.5 },
    NoiseSpec::RandomHorizontalFlip { p: 0.8 },
    NoiseSpec::RandomGrayscale { p: 0.8 },
    NoiseSpec::ColorJitter {
        brightness: 0.3,
        hue: 0.1,
    },
    NoiseSpec::ColorJitter {
        brightness: 0.5,
        hue: 0.3,
    },
    NoiseSpec::RandomResizedCrop { side: 39 },
    NoiseSpec::RandomResizedCrop { side: 50 },
    NoiseSpec::RandomResizedCrop { side: 100 },
    NoiseSpec::RandomResizedCrop { side: 120 },
    NoiseSpec::RandomResizedCrop { side: 150 },
    NoiseSpec::RandomResizedCrop { side: 190 },
];

pub fn catalog() -> &'static [NoiseSpec] {
    &CATALOG
}

impl NoiseSpec {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseSpec::GaussianBlur { .. } => NoiseKind::GaussianBlur,
            NoiseSpec::RandomHorizontalFlip { .. } => NoiseKind::RandomHorizontalFlip,
            NoiseSpec::RandomGrayscale { .. } => NoiseKind::RandomGrayscale,
            NoiseSpec::ColorJitter { .. } => NoiseKind::ColorJitter,
            NoiseSpec::RandomResizedCrop { .. } => NoiseKind::RandomResizedCrop,
        }
    }

    /// File-name friendly tag, e.g. `colorjitter_b0.5_h0.3`.
    pub fn tag(&self) -> String {
        match *self {
            NoiseSpec::GaussianBlur { kernel } => format!("gaussianblur_k{kernel}"),
            NoiseSpec::RandomHorizontalFlip { p } => format!("hflip_p{p}"),
            NoiseSpec::RandomGrayscale { p } => format!("grayscale_p{p}"),
            NoiseSpec::ColorJitter { brightness, hue } => format!("colorjitter_b{brightness}_h{hue}"),
            NoiseSpec::RandomResizedCrop { side } => format!("resizedcrop_s{side}"),
        }
    }

    /// Parses a tag produced by [`NoiseSpec::tag`]. Accepts non-catalog values.
    pub fn from_tag(tag: &str) -> Option<NoiseSpec> {
        let (family, rest) = tag.split_once('_')?;
        let num = |prefix: char, s: &str| -> Option<f64> { s.strip_prefix(prefix)?.parse().ok() };
        let int = |prefix: char, s: &str| -> Option<usize> { s.strip_prefix(prefix)?.parse().ok() };
        let spec = match family {
            "gaussianblur" => NoiseSpec::GaussianBlur {
                kernel: int('k', rest)?,
            },
            "hflip" => NoiseSpec::RandomHorizontalFlip { p: num('p', rest)? },
            "grayscale" => NoiseSpec::RandomGrayscale { p: num('p', rest)? },
            "colorjitter" => {
                let (b, h) = rest.split_once('_')?;
                NoiseSpec::ColorJitter {
                    brightness: num('b', b)?,
                    hue: num('h', h)?,
                }
            }
            "resizedcrop" => NoiseSpec::RandomResizedCrop {
                side: int('s', rest)?,
            },
            _ => return None,
        };
        Some(spec)
    }

    /// `true` when the spec is one of the fourteen catalog entries.
    pub fn is_canonical(&self) -> bool {
        CATALOG.contains(self)
    }

    /// Parameter-range check independent of any image.
    pub fn validate(&self) -> Result<(), AugmentError> {
        let prob = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(AugmentError::InvalidParameter(format!("probability {p} outside [0, 1]")))
            }
        };
        match *self {
            NoiseSpec::GaussianBlur { kernel } if kernel % 2 == 0 => Err(AugmentError::EvenKernel(kernel)),
            NoiseSpec::GaussianBlur { .. } => Ok(()),
            NoiseSpec::RandomHorizontalFlip { p } | NoiseSpec::RandomGrayscale { p } => prob(p),
            NoiseSpec::ColorJitter { brightness, hue } => {
                if !(brightness >= 0.0 && brightness.is_finite()) {
                    return Err(AugmentError::InvalidParameter(format!("brightness {brightness}")));
                }
                if !(0.0..=0.5).contains(&hue) {
                    return Err(AugmentError::HueOutOfRange(hue));
                }
                Ok(())
            }
            NoiseSpec::RandomResizedCrop { side: 0 } => Err(AugmentError::ZeroDimension),
            NoiseSpec::RandomResizedCrop { .. } => Ok(()),
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseSpec::GaussianBlur { kernel } => write!(f, "GaussianBlur({kernel})"),
            NoiseSpec::RandomHorizontalFlip { p } => write!(f, "RandomHorizontalFlip({p})"),
            NoiseSpec::RandomGrayscale { p } => write!(f, "RandomGrayscale({p})"),
            NoiseSpec::ColorJitter { brightness, hue } => {
                write!(f, "ColorJitter(brightness={brightness}, hue={hue})")
            }
            NoiseSpec::RandomResizedCrop { side } => write!(f, "RandomResizedCrop({side})"),
        }
    }
}

/// Standard deviation used for a blur kernel of odd size `kernel`.
pub fn blur_sigma(kernel: usize) -> f64 {
    0.3 * ((kernel as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalised 1-D Gaussian weights of length `kernel`.
pub fn gaussian_kernel_1d(kernel: usize) -> Vec<f64> {
    let sigma = blur_sigma(kernel);
    let r = (kernel / 2) as f64;
    let mut w: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            math::exp(-(d * d) / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Separable convolution of every channel with `weights` along both axes.
pub(crate) fn separable_filter(img: &Image, weights: &[f64]) -> Vec<f64> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let r = (weights.len() / 2) as isize;
    let src = img.data();
    let mut tmp = alloc::vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let xx = reflect101(x as isize + k as isize - r, w);
                    acc += wt * src[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = alloc::vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let yy = reflect101(y as isize + k as isize - r, h);
                    acc += wt * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Image, kernel: usize) -> Result<Image, AugmentError> {
    if kernel.is_multiple_of(2) {
        return Err(AugmentError::EvenKernel(kernel));
    }
    let side = img.height().min(img.width());
    if kernel > side {
        return Err(AugmentError::KernelLargerThanImage { kernel, side });
    }
    let out = separable_filter(img, &gaussian_kernel_1d(kernel));
    Ok(Image::from_clamped(img.height(), img.width(), img.channels(), out)?)
}

pub fn horizontal_flip(img: &Image, p: f64, rng: &mut Rng) -> Image {
    if rng.bernoulli(p) {
        img.flip_horizontal()
    } else {
        img.clone()
    }
}

/// With probability `p`, replaces every channel by luma; channel count is kept.
pub fn grayscale_with_prob(img: &Image, p: f64, rng: &mut Rng) -> Image {
    if !rng.bernoulli(p) || img.channels() == 1 {
        return img.clone();
    }
    let data: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let y = luma(px[0], px[1], px[2]);
            [y, y, y]
        })
        .collect();
    Image::new(img.height(), img.width(), 3, data).expect("luma preserves shape and range")
}

/// Multiplies all samples by `factor`, clamping to `[0, 1]`.
pub fn scale_brightness(img: &Image, factor: f64) -> Image {
    img.map(|v| v * factor)
}

pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h6 = if max == r {
        (g - b) / delta
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let h = math::wrap_unit(h6 / 6.0);
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (v, v, v);
    }
    let h6 = math::wrap_unit(h) * 6.0;
    let sector = math::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotates hue by `shift` turns. Grayscale images are returned unchanged.
pub fn rotate_hue(img: &Image, shift: f64) -> Image {
    if img.channels() == 1 || shift == 0.0 {
        return img.clone();
    }
    let data: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb(h + shift, s, v);
            [clamp01(r), clamp01(g), clamp01(b)]
        })
        .collect();
    Image::new(img.height(), img.width(), 3, data).expect("hsv round trip preserves shape")
}

/// Brightness factor uniform in `[max(0, 1 - brightness), 1 + brightness]`,
/// then hue shift uniform in `[-hue, hue]`. Both draws are always taken.
pub fn color_jitter(img: &Image, brightness: f64, hue: f64, rng: &mut Rng) -> Result<Image, AugmentError> {
    if !(0.0..=0.5).contains(&hue) {
        return Err(AugmentError::HueOutOfRange(hue));
    }
    if !(brightness >= 0.0) {
        return Err(AugmentError::InvalidParameter(format!("brightness {brightness}")));
    }
    let factor = rng.uniform_range((1.0 - brightness).max(0.0), 1.0 + brightness);
    let shift = rng.uniform_range(-hue, hue);
    let mut out = if factor == 1.0 {
        img.clone()
    } else {
        scale_brightness(img, factor)
    };
    if shift != 0.0 {
        out = rotate_hue(&out, shift);
    }
    Ok(out)
}

/// Crop window `(top, left, height, width)` chosen by [`random_resized_crop`].
pub fn sample_crop_window(height: usize, width: usize, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let area = (height * width) as f64;
    let (log_lo, log_hi) = (math::ln(CROP_RATIO_RANGE.0), math::ln(CROP_RATIO_RANGE.1));
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.uniform_range(CROP_AREA_RANGE.0, CROP_AREA_RANGE.1);
        let ratio = math::exp(rng.uniform_range(log_lo, log_hi));
        let cw = math::round(math::sqrt(target * ratio)) as usize;
        let ch = math::round(math::sqrt(target / ratio)) as usize;
        if cw > 0 && ch > 0 && cw <= width && ch <= height {
            let top = rng.below(height - ch + 1);
            let left = rng.below(width - cw + 1);
            return (top, left, ch, cw);
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (ch, cw) = if in_ratio < CROP_RATIO_RANGE.0 {
        ((math::round(width as f64 / CROP_RATIO_RANGE.0) as usize).min(height), width)
    } else if in_ratio > CROP_RATIO_RANGE.1 {
        (height, (math::round(height as f64 * CROP_RATIO_RANGE.1) as usize).min(width))
    } else {
        (height, width)
    };
    ((height - ch) / 2, (width - cw) / 2, ch.max(1), cw.max(1))
}

pub fn random_resized_crop(img: &Image, out_side: usize, rng: &mut Rng) -> Result<Image, AugmentError> {
    if out_side == 0 {
        return Err(AugmentError::ZeroDimension);
    }
    let (top, left, h, w) = sample_crop_window(img.height(), img.width(), rng);
    let crop = img.crop(top, left, h, w)?;
    Ok(resize_bilinear(&crop, out_side, out_side)?)
}

/// Output of [`apply_noise`] with its provenance flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Distorted {
    pub image: Image,
    pub canonical: bool,
}

pub fn apply_noise(spec: &NoiseSpec, img: &Image, rng: &mut Rng) -> Result<Distorted, AugmentError> {
    spec.validate()?;
    let image = match *spec {
        NoiseSpec::GaussianBlur { kernel } => gaussian_blur(img, kernel)?,
        NoiseSpec::RandomHorizontalFlip { p } => horizontal_flip(img, p, rng),
        NoiseSpec::RandomGrayscale { p } => grayscale_with_prob(img, p, rng),
        NoiseSpec::ColorJitter { brightness, hue } => color_jitter(img, brightness, hue, rng)?,
        NoiseSpec::RandomResizedCrop { side } => random_resized_crop(img, side, rng)?,
    };
    Ok(Distorted {
        image,
        canonical: spec.is_canonical(),
    })
}

/// Seed of the stream used for image `image_index` under catalog entry `spec_index`.
pub fn corpus_substream_seed(seed: u64, image_index: usize, spec_index: usize) -> u64 {
    crate::rng::derive_seed(seed, &[image_index as u64, spec_index as u64])
}

/// Distorts one source image with every spec in `specs`, each on its own substream.
pub fn distort_all(
    img: &Image,
    image_index: usize,
    specs: &[NoiseSpec],
    seed: u64,
) -> Result<Vec<(u64, Distorted)>, AugmentError> {
    specs
        .iter()
        .enumerate()
        .map(|(si, spec)| {
            let sub = corpus_substream_seed(seed, image_index, si);
            let mut rng = Rng::new(sub);
            apply_noise(spec, img, &mut rng).map(|d| (sub, d))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn textured(h: usize, w: usize) -> Image {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                data.push(((x * 7 + y * 3) % 17) as f64 / 16.0);
                data.push(((x * 2 + y * 5) % 11) as f64 / 10.0);
                data.push((x + y) as f64 / (h + w) as f64);
            }
        }
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn catalog_matches_the_fourteen_configurations() {
        assert_eq!(CATALOG.len(), 14);
        let tags: Vec<String> = CATALOG.iter().map(|s| s.tag()).collect();
        assert_eq!(
            tags,
            vec![
                "gaussianblur_k3",
                "gaussianblur_k13",
                "gaussianblur_k39",
                "hflip_p0.5",
                "hflip_p0.8",
                "grayscale_p0.8",
                "colorjitter_b0.3_h0.1",
                "colorjitter_b0.5_h0.3",
                "resizedcrop_s39",
                "resizedcrop_s50",
                "resizedcrop_s100",
                "resizedcrop_s120",
                "resizedcrop_s150",
                "resizedcrop_s190",
            ]
        );
        for spec in CATALOG {
            assert_eq!(NoiseSpec::from_tag(&spec.tag()), Some(spec));
            assert!(spec.is_canonical());
            spec.validate().unwrap();
        }
        assert!(!NoiseSpec::GaussianBlur { kernel: 5 }.is_canonical());
        assert_eq!(NoiseSpec::from_tag("bogus_k3"), None);
    }

    #[test]
    fn sigma_convention() {
        assert!((blur_sigma(3) - 0.8).abs() < 1e-15);
        assert!((blur_sigma(13) - 2.3).abs() < 1e-12);
        assert!((blur_sigma(39) - 6.2).abs() < 1e-12);
    }

    #[test]
    fn blur_constant_is_identity() {
        let img = Image::filled(40, 41, 3, 0.42).unwrap();
        for k in [1, 3, 13, 39] {
            let out = gaussian_blur(&img, k).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
        }
    }

    #[test]
    fn blur_impulse_is_kernel_outer_product() {
        // Oracle: direct 2-D convolution with weights exp(-(dx²+dy²)/2σ²), normalised.
        let mut data = vec![0.0; 81];
        data[4 * 9 + 4] = 1.0;
        let img = Image::new(9, 9, 1, data).unwrap();
        let out = gaussian_blur(&img, 3).unwrap();
        let sigma = 0.8f64;
        let mut w2 = [[0.0f64; 3]; 3];
        let mut total = 0.0;
        for (dy, row) in w2.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let (a, b) = (dy as f64 - 1.0, dx as f64 - 1.0);
                *v = (-(a * a + b * b) / (2.0 * sigma * sigma)).exp();
                total += *v;
            }
        }
        for y in 0..9 {
            for x in 0..9 {
                let expected = if (3..=5).contains(&y) && (3..=5).contains(&x) {
                    w2[y - 3][x - 3] / total
                } else {
                    0.0
                };
                assert!((out.get(y, x, 0) - expected).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn blur_errors() {
        let img = Image::filled(8, 8, 1, 0.0).unwrap();
        assert_eq!(gaussian_blur(&img, 4), Err(AugmentError::EvenKernel(4)));
        assert_eq!(
            gaussian_blur(&img, 9),
            Err(AugmentError::KernelLargerThanImage { kernel: 9, side: 8 })
        );
    }

    #[test]
    fn blur_preserves_mean_on_interior_dominated_image() {
        let img = textured(96, 96);
        let out = gaussian_blur(&img, 3).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1e-4);
    }

    #[test]
    fn flip_semantics() {
        let img = textured(5, 6);
        let mut rng = Rng::new(1);
        let once = horizontal_flip(&img, 1.0, &mut rng);
        assert_eq!(horizontal_flip(&once, 1.0, &mut rng), img);
        assert_eq!(horizontal_flip(&img, 0.0, &mut rng), img);
    }

    #[test]
    fn flip_frequency_matches_probability() {
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let flipped = (0..10_000u64)
            .filter(|&t| {
                let mut rng = Rng::substream(99, &[t]);
                horizontal_flip(&img, 0.8, &mut rng).get(0, 0, 0) == 1.0
            })
            .count();
        let frac = flipped as f64 / 10_000.0;
        assert!((0.78..=0.82).contains(&frac), "{frac}");
    }

    #[test]
    fn grayscale_probability_semantics() {
        let mut rng = Rng::new(5);
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let g = grayscale_with_prob(&red, 1.0, &mut rng);
        assert_eq!(g.channels(), 3);
        for v in g.data() {
            assert!((v - 0.299).abs() < 1e-15);
        }
        assert_eq!(grayscale_with_prob(&red, 0.0, &mut rng), red);
        assert_eq!(grayscale_with_prob(&g, 1.0, &mut rng), g);
    }

    #[test]
    fn jitter_identity_and_gray_fixed_point() {
        let img = textured(6, 6);
        let mut rng = Rng::new(2);
        assert_eq!(color_jitter(&img, 0.0, 0.0, &mut rng).unwrap(), img);
        let gray = Image::filled(2, 2, 3, 0.5).unwrap();
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let out = color_jitter(&gray, 0.5, 0.3, &mut rng).unwrap();
            for px in out.data().chunks_exact(3) {
                assert_eq!(px[0], px[1]);
                assert_eq!(px[1], px[2]);
            }
        }
        assert_eq!(
            color_jitter(&img, 0.1, 0.6, &mut rng),
            Err(AugmentError::HueOutOfRange(0.6))
        );
    }

    #[test]
    fn hue_rotation_red_to_green() {
        // Oracle: HSV red is h = 0; h + 1/3 lands exactly on pure green.
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let g = rotate_hue(&red, 1.0 / 3.0);
        let expected = [0.0, 1.0, 0.0];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
        let b = rotate_hue(&red, 2.0 / 3.0);
        for (a, e) in b.data().iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.4, 0.9), (1.0, 0.5, 0.0), (0.3, 0.3, 0.1), (0.0, 0.0, 0.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn resized_crop_shape_constant_determinism() {
        let img = textured(48, 64);
        for side in [1, 39, 190] {
            let mut rng = Rng::new(8);
            let out = random_resized_crop(&img, side, &mut rng).unwrap();
            assert_eq!((out.height(), out.width(), out.channels()), (side, side, 3));
        }
        let k = Image::filled(30, 50, 3, 0.25).unwrap();
        let mut rng = Rng::new(4);
        let out = random_resized_crop(&k, 17, &mut rng).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        let a = random_resized_crop(&img, 50, &mut Rng::new(77)).unwrap();
        let b = random_resized_crop(&img, 50, &mut Rng::new(77)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            random_resized_crop(&img, 0, &mut Rng::new(1)),
            Err(AugmentError::ZeroDimension)
        );
    }

    #[test]
    fn crop_fallback_centres_extreme_aspect() {
        // A 1-pixel-tall strip can never fit a sampled window with ratio <= 4/3
        // and area >= 8%, so the centre fallback is taken.
        let (top, left, h, w) = sample_crop_window(1, 200, &mut Rng::new(3));
        assert_eq!((top, h), (0, 1));
        assert_eq!(w, 1);
        assert_eq!(left, 99);
    }

    #[test]
    fn dispatch_is_transparent() {
        let img = textured(40, 40);
        let spec = NoiseSpec::RandomHorizontalFlip { p: 0.5 };
        for seed in 0..10 {
            let via = apply_noise(&spec, &img, &mut Rng::new(seed)).unwrap();
            let direct = horizontal_flip(&img, 0.5, &mut Rng::new(seed));
            assert_eq!(via.image, direct);
            assert!(via.canonical);
        }
        let k = Image::filled(40, 40, 3, 0.7).unwrap();
        let blurred = apply_noise(&CATALOG[0], &k, &mut Rng::new(0)).unwrap();
        assert!(blurred.image.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        let odd = apply_noise(&NoiseSpec::GaussianBlur { kernel: 5 }, &img, &mut Rng::new(0)).unwrap();
        assert!(!odd.canonical);
    }

    #[test]
    fn distort_all_fans_out_and_repeats() {
        let img = textured(48, 48);
        let a = distort_all(&img, 3, &CATALOG, 17).unwrap();
        let b = distort_all(&img, 3, &CATALOG, 17).unwrap();
        assert_eq!(a.len(), 14);
        assert_eq!(a, b);
    }

    fn arb_rgb() -> impl Strategy<Value = Image> {
        (40usize..56, 40usize..56).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |d| Image::new(h, w, 3, d).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn every_catalog_transform_yields_valid_images(img in arb_rgb(), seed in any::<u64>()) {
            for spec in CATALOG {
                let out = apply_noise(&spec, &img, &mut Rng::new(seed)).unwrap().image;
                prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert_eq!(out.data().len(), out.height() * out.width() * out.channels());
                prop_assert_eq!(out.channels(), 3);
                let again = apply_noise(&spec, &img, &mut Rng::new(seed)).unwrap().image;
                prop_assert_eq!(out, again);
            }
        }
    }
}
