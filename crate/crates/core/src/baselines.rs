//! Classic comparison indicators: MSE, PSNR, SSIM (full reference) and
//! AG, SF, NIQE (no reference). All operate on unit-interval samples.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::augment::{reflect101, separable_filter};
use crate::image::{resize_bilinear, to_grayscale, Image};
use crate::linalg::{pinv_symmetric, LinalgError, Matrix};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("image shapes differ")]
    ShapeMismatch,
    #[error("image smaller than the required {0} pixels per side")]
    ImageTooSmall(usize),
    #[error("need at least {need} pristine images, got {got}")]
    TooFewPristine { need: usize, got: usize },
    #[error("no patch passed the sharpness threshold")]
    NoQualifyingPatches,
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    Mse,
    Psnr,
    Ssim,
    Ag,
    Sf,
    Niqe,
    Fid,
    SiFid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    /// Maps a score so that larger always means better quality.
    pub fn orient(self, v: f64) -> f64 {
        match self {
            Orientation::LowerBetter => -v,
            Orientation::HigherBetter => v,
        }
    }
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Mse,
        MetricKind::Psnr,
        MetricKind::Ssim,
        MetricKind::Ag,
        MetricKind::Sf,
        MetricKind::Niqe,
        MetricKind::Fid,
        MetricKind::SiFid,
    ];

    pub fn orientation(self) -> Orientation {
        match self {
            MetricKind::Mse | MetricKind::Niqe | MetricKind::Fid | MetricKind::SiFid => Orientation::LowerBetter,
            MetricKind::Psnr | MetricKind::Ssim | MetricKind::Ag | MetricKind::Sf => Orientation::HigherBetter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::Ag => "ag",
            MetricKind::Sf => "sf",
            MetricKind::Niqe => "niqe",
            MetricKind::Fid => "fid",
            MetricKind::SiFid => "sifid",
        }
    }

    pub fn from_name(name: &str) -> Option<MetricKind> {
        MetricKind::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(name))
    }

    /// Whether the metric compares against a reference image.
    pub fn is_full_reference(self) -> bool {
        matches!(self, MetricKind::Mse | MetricKind::Psnr | MetricKind::Ssim | MetricKind::Fid | MetricKind::SiFid)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: MetricKind,
    pub value: f64,
    pub orientation: Orientation,
}

impl MetricScore {
    pub fn new(metric: MetricKind, value: f64) -> Self {
        Self {
            metric,
            value,
            orientation: metric.orientation(),
        }
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch);
    }
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(1 / mse)` in dB; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricError> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(psnr_from_mse(e))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * math::log10(1.0 / mse)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            math::exp(-(d * d) / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering of a single plane (no padding).
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().enumerate().map(|(i, wt)| wt * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(i, wt)| wt * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over the valid region, on luma.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    ssim_with(a, b, &SsimConfig::default())
}

pub fn ssim_with(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch);
    }
    if a.height().min(a.width()) < cfg.window {
        return Err(MetricError::ImageTooSmall(cfg.window));
    }
    let (h, w) = (a.height(), a.width());
    let x = to_grayscale(a).into_data();
    let y = to_grayscale(b).into_data();
    let win = gaussian_window(cfg.window, cfg.sigma);
    let c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    let c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mu_x, oh, ow) = filter_valid(&x, h, w, &win);
    let (mu_y, _, _) = filter_valid(&y, h, w, &win);
    let (e_xx, _, _) = filter_valid(&xx, h, w, &win);
    let (e_yy, _, _) = filter_valid(&yy, h, w, &win);
    let (e_xy, _, _) = filter_valid(&xy, h, w, &win);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
        total += num / den;
    }
    Ok(total / (oh * ow) as f64)
}

/// Mean of `sqrt((dx² + dy²) / 2)` over forward differences, on luma.
pub fn average_gradient(img: &Image) -> Result<f64, MetricError> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(MetricError::ImageTooSmall(2));
    }
    let g = to_grayscale(img);
    let p = g.data();
    let mut total = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = p[y * w + x + 1] - p[y * w + x];
            let dy = p[(y + 1) * w + x] - p[y * w + x];
            total += math::sqrt((dx * dx + dy * dy) / 2.0);
        }
    }
    Ok(total / ((h - 1) * (w - 1)) as f64)
}

/// `sqrt(RF² + CF²)` with RF/CF the RMS horizontal/vertical neighbour differences.
pub fn spatial_frequency(img: &Image) -> Result<f64, MetricError> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(MetricError::ImageTooSmall(2));
    }
    let g = to_grayscale(img);
    let p = g.data();
    let mut rf = 0.0;
    for y in 0..h {
        for x in 1..w {
            let d = p[y * w + x] - p[y * w + x - 1];
            rf += d * d;
        }
    }
    rf /= (h * (w - 1)) as f64;
    let mut cf = 0.0;
    for y in 1..h {
        for x in 0..w {
            let d = p[y * w + x] - p[(y - 1) * w + x];
            cf += d * d;
        }
    }
    cf /= ((h - 1) * w) as f64;
    Ok(math::sqrt(rf + cf))
}

// ---------------------------------------------------------------------------
// NIQE
// ---------------------------------------------------------------------------

pub const NIQE_FEATURES: usize = 36;
pub const NIQE_MIN_PRISTINE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiqeConfig {
    pub patch_size: usize,
    pub sharpness_threshold: f64,
    pub window: usize,
    pub window_sigma: f64,
    pub stabilizer: f64,
}

impl Default for NiqeConfig {
    fn default() -> Self {
        Self {
            patch_size: 96,
            sharpness_threshold: 0.75,
            window: 7,
            window_sigma: 7.0 / 6.0,
            stabilizer: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub config: NiqeConfig,
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Asymmetric generalised Gaussian parameters fitted by moment matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggdParams {
    pub alpha: f64,
    pub left_std: f64,
    pub right_std: f64,
}

impl AggdParams {
    /// Mean of the fitted distribution.
    pub fn mean(&self) -> f64 {
        let a = self.alpha;
        let g1 = math::tgamma(1.0 / a);
        (self.right_std - self.left_std) * (math::tgamma(2.0 / a) / g1) * (math::sqrt(g1) / math::sqrt(math::tgamma(3.0 / a)))
    }
}

/// `Γ(2/α)² / (Γ(1/α)·Γ(3/α))`, increasing in α.
fn aggd_ratio(alpha: f64) -> f64 {
    let g2 = math::tgamma(2.0 / alpha);
    g2 * g2 / (math::tgamma(1.0 / alpha) * math::tgamma(3.0 / alpha))
}

/// Moment-matching fit; α is searched on `[0.2, 10]` by bisection.
pub fn fit_aggd(samples: &[f64]) -> AggdParams {
    let (mut ls, mut ln_) = (0.0, 0usize);
    let (mut rs, mut rn) = (0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &v in samples {
        if v < 0.0 {
            ls += v * v;
            ln_ += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
        abs_sum += math::abs(v);
        sq_sum += v * v;
    }
    let left_std = if ln_ > 0 { math::sqrt(ls / ln_ as f64) } else { 0.0 };
    let right_std = if rn > 0 { math::sqrt(rs / rn as f64) } else { 0.0 };
    if left_std == 0.0 || right_std == 0.0 || sq_sum == 0.0 {
        return AggdParams {
            alpha: 10.0,
            left_std,
            right_std,
        };
    }
    let n = samples.len() as f64;
    let gamma_hat = left_std / right_std;
    let r_hat = (abs_sum / n) * (abs_sum / n) / (sq_sum / n);
    let target = r_hat * (gamma_hat * gamma_hat * gamma_hat + 1.0) * (gamma_hat + 1.0) / ((gamma_hat * gamma_hat + 1.0) * (gamma_hat * gamma_hat + 1.0));
    let (mut lo, mut hi) = (0.2f64, 10.0f64);
    if target <= aggd_ratio(lo) {
        hi = lo;
    } else if target >= aggd_ratio(hi) {
        lo = hi;
    } else {
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if aggd_ratio(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    AggdParams {
        alpha: 0.5 * (lo + hi),
        left_std,
        right_std,
    }
}

/// Mean-subtracted contrast-normalised coefficients and the local std map.
pub fn mscn(plane: &[f64], h: usize, w: usize, cfg: &NiqeConfig) -> (Vec<f64>, Vec<f64>) {
    let win = gaussian_window(cfg.window, cfg.window_sigma);
    let img = Image::from_clamped(h, w, 1, plane.to_vec()).expect("plane shape");
    let mu = separable_filter(&img, &win);
    let sq = Image::from_clamped(h, w, 1, plane.iter().map(|v| v * v).collect()).expect("plane shape");
    let mu_sq = separable_filter(&sq, &win);
    let sigma: Vec<f64> = mu_sq
        .iter()
        .zip(&mu)
        .map(|(e2, m)| math::sqrt(math::abs(e2 - m * m)))
        .collect();
    let coeffs = plane
        .iter()
        .zip(&mu)
        .zip(&sigma)
        .map(|((v, m), s)| (v - m) / (s + cfg.stabilizer))
        .collect();
    (coeffs, sigma)
}

/// Neighbour-product maps (horizontal, vertical, main and anti diagonal),
/// edges mirrored.
fn pair_products(coeffs: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let shifts: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    shifts.map(|(dy, dx)| {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let yy = reflect101(y as isize + dy, h);
                let xx = reflect101(x as isize + dx, w);
                out.push(coeffs[y * w + x] * coeffs[yy * w + xx]);
            }
        }
        out
    })
}

fn patch_samples(map: &[f64], w: usize, y0: usize, x0: usize, size: usize) -> Vec<f64> {
    let mut patch = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        patch.extend_from_slice(&map[y * w + x0..y * w + x0 + size]);
    }
    patch
}

/// 18 features of one patch: MSCN (α, mean variance) and, for each of the
/// four neighbour products, (α, mean, σl², σr²).
fn patch_features(coeffs: &[f64], products: &[Vec<f64>; 4], w: usize, y0: usize, x0: usize, size: usize, out: &mut Vec<f64>) {
    let p = fit_aggd(&patch_samples(coeffs, w, y0, x0, size));
    out.push(p.alpha);
    out.push((p.left_std * p.left_std + p.right_std * p.right_std) / 2.0);
    for map in products {
        let q = fit_aggd(&patch_samples(map, w, y0, x0, size));
        out.push(q.alpha);
        out.push(q.mean());
        out.push(q.left_std * q.left_std);
        out.push(q.right_std * q.right_std);
    }
}

fn downsample_half(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let s = plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1];
            out.push(s / 4.0);
        }
    }
    (out, oh, ow)
}

/// Per-patch 36-d features and patch sharpness (mean local std at scale 1).
pub fn niqe_patch_features(img: &Image, cfg: &NiqeConfig) -> Result<Vec<(Vec<f64>, f64)>, MetricError> {
    let p = cfg.patch_size;
    if p < 4 || !p.is_multiple_of(2) {
        return Err(MetricError::ImageTooSmall(p));
    }
    let (h, w) = (img.height(), img.width());
    if h < p || w < p {
        return Err(MetricError::ImageTooSmall(p));
    }
    let (h, w) = (h - h % p, w - w % p);
    let gray = to_grayscale(&img.crop(0, 0, h, w).expect("cropped within bounds"));
    let plane = gray.into_data();
    let (c1, s1) = mscn(&plane, h, w, cfg);
    let (half, h2, w2) = downsample_half(&plane, h, w);
    let (c2, _) = mscn(&half, h2, w2, cfg);
    let p1 = pair_products(&c1, h, w);
    let p2 = pair_products(&c2, h2, w2);
    let mut out = Vec::new();
    for py in 0..h / p {
        for px in 0..w / p {
            let mut feats = Vec::with_capacity(NIQE_FEATURES);
            patch_features(&c1, &p1, w, py * p, px * p, p, &mut feats);
            patch_features(&c2, &p2, w2, py * p / 2, px * p / 2, p / 2, &mut feats);
            let mut sharp = 0.0;
            for y in py * p..(py + 1) * p {
                for x in px * p..(px + 1) * p {
                    sharp += s1[y * w + x];
                }
            }
            out.push((feats, sharp / (p * p) as f64));
        }
    }
    Ok(out)
}

fn mean_and_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
    let d = rows.first().map_or(0, |r| r.len());
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    if n >= 2 {
        for r in rows {
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }
    (mean, cov)
}

/// Fits the pristine multivariate Gaussian from sharp patches.
pub fn niqe_fit(pristine: &[Image], cfg: &NiqeConfig) -> Result<NiqeModel, MetricError> {
    if pristine.len() < NIQE_MIN_PRISTINE {
        return Err(MetricError::TooFewPristine {
            need: NIQE_MIN_PRISTINE,
            got: pristine.len(),
        });
    }
    let mut rows = Vec::new();
    for img in pristine {
        let patches = niqe_patch_features(img, cfg)?;
        let max_sharp = patches.iter().fold(0.0f64, |m, (_, s)| m.max(*s));
        rows.extend(
            patches
                .into_iter()
                .filter(|(f, s)| max_sharp > 0.0 && *s >= cfg.sharpness_threshold * max_sharp && f.iter().all(|v| v.is_finite()))
                .map(|(f, _)| f),
        );
    }
    if rows.is_empty() {
        return Err(MetricError::NoQualifyingPatches);
    }
    let (mean, cov) = mean_and_cov(&rows);
    Ok(NiqeModel {
        config: *cfg,
        mean,
        cov,
    })
}

/// Mahalanobis-like distance between the pristine model and the image's patch statistics.
pub fn niqe_score(img: &Image, model: &NiqeModel) -> Result<f64, MetricError> {
    let rows: Vec<Vec<f64>> = niqe_patch_features(img, &model.config)?
        .into_iter()
        .map(|(f, _)| f)
        .filter(|f| f.iter().all(|v| v.is_finite()))
        .collect();
    if rows.is_empty() {
        return Err(MetricError::NoQualifyingPatches);
    }
    let (mean, cov) = mean_and_cov(&rows);
    let pooled = model.cov.add(&cov)?.scale(0.5);
    let inv = pinv_symmetric(&pooled)?;
    let diff: Vec<f64> = model.mean.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let q: f64 = inv.mat_vec(&diff)?.iter().zip(&diff).map(|(a, b)| a * b).sum();
    Ok(math::sqrt(q.max(0.0)))
}

/// Convenience: resizes `img` so that its short side is at least one patch.
pub fn ensure_patch_size(img: &Image, cfg: &NiqeConfig) -> Image {
    let short = img.height().min(img.width());
    if short >= cfg.patch_size {
        return img.clone();
    }
    let scale = cfg.patch_size as f64 / short as f64;
    let h = libm::ceil(img.height() as f64 * scale) as usize;
    let w = libm::ceil(img.width() as f64 * scale) as usize;
    resize_bilinear(img, h.max(cfg.patch_size), w.max(cfg.patch_size)).expect("nonzero")
}
