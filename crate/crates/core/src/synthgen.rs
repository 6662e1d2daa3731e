//! Synthetic (reference, stitched) pairs with misalignment and ghosting of
//! controllable severity.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::correlation::{EvalGroup, EvalItem};
use crate::image::{Image, ImageError};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::rng::Rng;
use crate::subjective::SubjectiveScore;

pub const MIN_SOURCE_SIDE: usize = 64;
pub const MAX_SEVERITY: u8 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("displaced corners do not form a convex quadrilateral")]
    DegenerateQuad,
    #[error("source is {0}x{1}; both sides must be at least 64")]
    SourceTooSmall(usize, usize),
    #[error("need at least 2 sources, got {0}")]
    TooFewSources(usize),
    #[error("severity {0} outside 1..=5")]
    InvalidSeverity(u8),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// How strongly one stitched image is damaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionRecipe {
    pub severity: u8,
    /// Largest corner displacement of the ghost warp, in pixels.
    pub misalignment: f64,
    /// Blend weight of the warped copy right of the seam.
    pub ghost_opacity: f64,
    /// Seam column as a fraction of the width.
    pub seam_position: f64,
}

impl DistortionRecipe {
    pub fn for_severity(level: u8) -> Result<Self, SynthError> {
        if !(1..=MAX_SEVERITY).contains(&level) {
            return Err(SynthError::InvalidSeverity(level));
        }
        Ok(Self {
            severity: level,
            misalignment: 2.0 * level as f64,
            ghost_opacity: 0.1 * level as f64,
            seam_position: 0.5,
        })
    }

    /// Leaves the source untouched.
    pub fn null() -> Self {
        Self {
            severity: 0,
            misalignment: 0.0,
            ghost_opacity: 0.0,
            seam_position: 0.5,
        }
    }
}

/// Random smooth-plus-edges RGB test scene.
pub fn random_scene(h: usize, w: usize, rng: &mut Rng) -> Image {
    let mut data = alloc::vec![0.0; h * w * 3];
    let mut base = [[0.0; 3]; 3];
    for c in base.iter_mut() {
        *c = [rng.uniform_range(0.2, 0.8), rng.uniform_range(-0.3, 0.3), rng.uniform_range(-0.3, 0.3)];
    }
    let gratings: Vec<[f64; 5]> = (0..3)
        .map(|_| {
            let period = rng.uniform_range(6.0, 40.0);
            let theta = rng.uniform_range(0.0, core::f64::consts::PI);
            let k = 2.0 * core::f64::consts::PI / period;
            [k * math::cos(theta), k * math::sin(theta), rng.uniform_range(0.0, 6.3), rng.uniform_range(0.03, 0.12), rng.below(3) as f64]
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            for c in 0..3 {
                let mut s = base[c][0] + base[c][1] * (u - 0.5) + base[c][2] * (v - 0.5);
                for g in &gratings {
                    let amp = if g[4] as usize == c { g[3] * 1.5 } else { g[3] };
                    s += amp * math::sin(g[0] * x as f64 + g[1] * y as f64 + g[2]);
                }
                data[(y * w + x) * 3 + c] = s;
            }
        }
    }
    let shapes = 6 + rng.below(7);
    for _ in 0..shapes {
        let color = [rng.uniform(), rng.uniform(), rng.uniform()];
        let cy = rng.uniform_range(0.0, h as f64);
        let cx = rng.uniform_range(0.0, w as f64);
        let ry = rng.uniform_range(0.04, 0.2) * h as f64;
        let rx = rng.uniform_range(0.04, 0.2) * w as f64;
        let disc = rng.bernoulli(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    math::abs(dy) <= 1.0 && math::abs(dx) <= 1.0
                };
                if inside {
                    data[(y * w + x) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    Image::from_clamped(h, w, 3, data).expect("scene dimensions are nonzero")
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Homography taking each `from[i]` to `to[i]`, as a 3×3 matrix with the
/// last entry fixed to 1.
fn homography(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Result<Matrix, SynthError> {
    let mut a = Matrix::zeros(8, 8);
    let mut b = alloc::vec![0.0; 8];
    let mut rows: Vec<[f64; 8]> = Vec::with_capacity(8);
    for i in 0..4 {
        let ([x, y], [u, v]) = (from[i], to[i]);
        rows.push([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        b[2 * i] = u;
        rows.push([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[2 * i + 1] = v;
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, &val) in row.iter().enumerate() {
            a[(r, c)] = val;
        }
    }
    let h = linalg::solve(&a, &b).map_err(|_| SynthError::DegenerateQuad)?;
    Ok(Matrix::from_vec(3, 3, alloc::vec![h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0]).expect("3x3"))
}

fn bilinear(img: &Image, sy: f64, sx: f64, c: usize) -> f64 {
    let (y0, x0) = (math::floor(sy), math::floor(sx));
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
    let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Warps `img` so its corners (top-left, top-right, bottom-right,
/// bottom-left) move by `displacements` (`[dx, dy]` in pixels). Samples that
/// map outside the source are black.
pub fn warp_homography(img: &Image, displacements: &[[f64; 2]; 4]) -> Result<Image, SynthError> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
    let corners = [[0.0, 0.0], [wm, 0.0], [wm, hm], [0.0, hm]];
    let mut moved = corners;
    for (m, d) in moved.iter_mut().zip(displacements) {
        m[0] += d[0];
        m[1] += d[1];
    }
    let turns: Vec<f64> = (0..4).map(|i| cross(moved[i], moved[(i + 1) % 4], moved[(i + 2) % 4])).collect();
    let eps = 1e-9 * (wm * hm).max(1.0);
    let convex = turns.iter().all(|&t| t > eps) || turns.iter().all(|&t| t < -eps);
    if !convex {
        return Err(SynthError::DegenerateQuad);
    }
    // Inverse map: output pixel -> source position.
    let inv = homography(&moved, &corners)?;
    let m = inv.data();
    let tol = 1e-9;
    let mut out = alloc::vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let z = m[6] * xf + m[7] * yf + m[8];
            let sx = (m[0] * xf + m[1] * yf + m[2]) / z;
            let sy = (m[3] * xf + m[4] * yf + m[5]) / z;
            if !(sx >= -tol && sx <= wm + tol && sy >= -tol && sy <= hm + tol) {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, wm), sy.clamp(0.0, hm));
            for c in 0..ch {
                out[(y * w + x) * ch + c] = bilinear(img, sy, sx, c);
            }
        }
    }
    Ok(Image::from_clamped(h, w, ch, out)?)
}

/// Unit corner draws in `[-1, 1]`, scaled by a recipe's misalignment.
pub fn draw_unit_displacements(rng: &mut Rng) -> [[f64; 2]; 4] {
    let mut d = [[0.0; 2]; 4];
    for corner in d.iter_mut() {
        for v in corner.iter_mut() {
            *v = rng.uniform_range(-1.0, 1.0);
        }
    }
    d
}

/// Stitched = source left of the seam; right of it, the source blended with
/// a mis-warped copy at the recipe's ghost opacity.
pub fn stitch_with(source: &Image, recipe: &DistortionRecipe, unit: &[[f64; 2]; 4]) -> Result<Image, SynthError> {
    let (h, w, ch) = (source.height(), source.width(), source.channels());
    if h < MIN_SOURCE_SIDE || w < MIN_SOURCE_SIDE {
        return Err(SynthError::SourceTooSmall(h, w));
    }
    let mut disp = *unit;
    for v in disp.iter_mut().flatten() {
        *v *= recipe.misalignment;
    }
    let warped = warp_homography(source, &disp)?;
    let seam = (math::floor(recipe.seam_position * w as f64) as usize).min(w);
    let a = recipe.ghost_opacity;
    let mut out = source.data().to_vec();
    for y in 0..h {
        for x in seam..w {
            for c in 0..ch {
                let i = source.index(y, x, c);
                out[i] = (1.0 - a) * source.data()[i] + a * warped.data()[i];
            }
        }
    }
    Ok(Image::from_clamped(h, w, ch, out)?)
}

pub fn make_stitched_pair(source: &Image, recipe: &DistortionRecipe, rng: &mut Rng) -> Result<(Image, Image), SynthError> {
    let unit = draw_unit_displacements(rng);
    Ok((source.clone(), stitch_with(source, recipe, &unit)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundlePair {
    pub image_id: String,
    pub source_id: String,
    pub severity: u8,
    pub reference: Image,
    pub stitched: Image,
}

/// Severity ladder over a set of sources, with ground-truth labels and
/// synthetic subjective scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub seed: u64,
    pub sources: Vec<(String, Image)>,
    pub pairs: Vec<BundlePair>,
    pub subjective: Vec<SubjectiveScore>,
}

pub const DEFAULT_JITTER: f64 = 3.0;

pub fn source_id(i: usize) -> String {
    format!("src{i:03}")
}

pub fn stitched_id(source: usize, severity: u8) -> String {
    format!("src{source:03}_sev{severity}")
}

pub fn build_severity_ladder(sources: &[Image], seed: u64) -> Result<Bundle, SynthError> {
    build_severity_ladder_with(sources, seed, DEFAULT_JITTER)
}

/// Each source gets severities 1..=5 from one set of corner draws, so only
/// the recipe varies along its ladder. Synthetic score:
/// `100 − 20(severity − 1) + U(−jitter, jitter)`.
pub fn build_severity_ladder_with(sources: &[Image], seed: u64, jitter: f64) -> Result<Bundle, SynthError> {
    if sources.len() < 2 {
        return Err(SynthError::TooFewSources(sources.len()));
    }
    let mut pairs = Vec::with_capacity(sources.len() * MAX_SEVERITY as usize);
    let mut subjective = Vec::with_capacity(pairs.capacity());
    for (si, src) in sources.iter().enumerate() {
        let unit = draw_unit_displacements(&mut Rng::substream(seed, &[si as u64, 0]));
        let mut jit = Rng::substream(seed, &[si as u64, 1]);
        for level in 1..=MAX_SEVERITY {
            let recipe = DistortionRecipe::for_severity(level)?;
            let id = stitched_id(si, level);
            let j = jit.uniform_range(-1.0, 1.0) * jitter;
            subjective.push(SubjectiveScore {
                image_id: id.clone(),
                value: 100.0 - 20.0 * (level as f64 - 1.0) + j,
                n_raters: 0,
            });
            pairs.push(BundlePair {
                image_id: id,
                source_id: source_id(si),
                severity: level,
                reference: src.clone(),
                stitched: stitch_with(src, &recipe, &unit)?,
            });
        }
    }
    Ok(Bundle {
        seed,
        sources: sources.iter().enumerate().map(|(i, s)| (source_id(i), s.clone())).collect(),
        pairs,
        subjective,
    })
}

impl Bundle {
    /// `(image_id, source_id, severity)` rows.
    pub fn labels(&self) -> Vec<(String, String, u8)> {
        self.pairs.iter().map(|p| (p.image_id.clone(), p.source_id.clone(), p.severity)).collect()
    }

    /// One group per source: reference tiles of the source, and tiles of
    /// each stitched image as its sample set.
    pub fn eval_groups(&self, tile: usize, stride: usize) -> Result<Vec<EvalGroup>, SynthError> {
        self.sources
            .iter()
            .map(|(sid, src)| {
                let items = self
                    .pairs
                    .iter()
                    .filter(|p| &p.source_id == sid)
                    .map(|p| {
                        Ok(EvalItem {
                            id: p.image_id.clone(),
                            stitched: p.stitched.tiles(tile, stride)?,
                        })
                    })
                    .collect::<Result<Vec<_>, SynthError>>()?;
                Ok(EvalGroup {
                    id: sid.clone(),
                    reference: src.tiles(tile, stride)?,
                    items,
                })
            })
            .collect()
    }

    /// Synthetic scores split by source, in pair order.
    pub fn subjective_by_group(&self) -> Vec<Vec<SubjectiveScore>> {
        self.sources
            .iter()
            .map(|(sid, _)| {
                self.pairs
                    .iter()
                    .zip(&self.subjective)
                    .filter(|(p, _)| &p.source_id == sid)
                    .map(|(_, s)| s.clone())
                    .collect()
            })
            .collect()
    }
}

/// Mean squared error over all samples of two same-shape images.
fn mse(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64
}

/// Checks the severity ordering of one ladder by pixel error.
pub fn ladder_is_monotone(pairs: &[BundlePair]) -> bool {
    let errs: Vec<f64> = pairs.iter().map(|p| mse(&p.reference, &p.stitched)).collect();
    errs.windows(2).all(|w| w[1] > w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::srocc;

    fn scene(seed: u64) -> Image {
        random_scene(96, 96, &mut Rng::new(seed))
    }

    #[test]
    fn recipes_grow_with_severity() {
        let r: Vec<DistortionRecipe> = (1..=5).map(|l| DistortionRecipe::for_severity(l).unwrap()).collect();
        for w in r.windows(2) {
            assert!(w[1].misalignment > w[0].misalignment && w[1].ghost_opacity > w[0].ghost_opacity);
            assert_eq!(w[1].seam_position, w[0].seam_position);
        }
        assert_eq!(r[4].misalignment, 10.0);
        assert!((r[4].ghost_opacity - 0.5).abs() < 1e-12);
        assert_eq!(DistortionRecipe::for_severity(0), Err(SynthError::InvalidSeverity(0)));
    }

    #[test]
    fn identity_warp() {
        let img = scene(1);
        let out = warp_homography(&img, &[[0.0; 2]; 4]).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_shifts_content() {
        let img = scene(2);
        let out = warp_homography(&img, &[[5.0, 0.0]; 4]).unwrap();
        for y in 0..img.height() {
            for c in 0..3 {
                for x in 0..5 {
                    assert_eq!(out.get(y, x, c), 0.0);
                }
                for x in 5..img.width() {
                    assert!((out.get(y, x, c) - img.get(y, x - 5, c)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn degenerate_quads_rejected() {
        let img = scene(3);
        // Pull the top-right corner onto the diagonal: three collinear corners.
        let w = (img.width() - 1) as f64;
        let h = (img.height() - 1) as f64;
        let collinear = [[0.0, 0.0], [-w / 2.0, h / 2.0], [0.0, 0.0], [0.0, 0.0]];
        assert_eq!(warp_homography(&img, &collinear), Err(SynthError::DegenerateQuad));
        let bowtie = [[0.0, 0.0], [0.0, h], [0.0, 0.0], [0.0, -h]];
        assert_eq!(warp_homography(&img, &bowtie), Err(SynthError::DegenerateQuad));
    }

    #[test]
    fn null_recipe_is_identity() {
        let img = scene(4);
        let (r, s) = make_stitched_pair(&img, &DistortionRecipe::null(), &mut Rng::new(9)).unwrap();
        assert_eq!(r, img);
        for (a, b) in r.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn small_source_rejected() {
        let img = random_scene(32, 32, &mut Rng::new(0));
        assert_eq!(
            make_stitched_pair(&img, &DistortionRecipe::for_severity(1).unwrap(), &mut Rng::new(0)),
            Err(SynthError::SourceTooSmall(32, 32))
        );
    }

    #[test]
    fn severity_five_beats_one() {
        let img = scene(5);
        let r1 = DistortionRecipe::for_severity(1).unwrap();
        let r5 = DistortionRecipe::for_severity(5).unwrap();
        let (_, s1) = make_stitched_pair(&img, &r1, &mut Rng::new(7)).unwrap();
        let (_, s5) = make_stitched_pair(&img, &r5, &mut Rng::new(7)).unwrap();
        assert!(mse(&img, &s5) > mse(&img, &s1));
    }

    #[test]
    fn ladder_shape_and_determinism() {
        let sources: Vec<Image> = (0..10).map(|i| random_scene(64, 64, &mut Rng::new(i))).collect();
        let a = build_severity_ladder(&sources, 11).unwrap();
        assert_eq!(a.pairs.len(), 50);
        for (i, p) in a.pairs.iter().enumerate() {
            assert_eq!(p.severity as usize, i % 5 + 1);
        }
        assert_eq!(a, build_severity_ladder(&sources, 11).unwrap());
        assert_eq!(build_severity_ladder(&sources[..1], 0), Err(SynthError::TooFewSources(1)));
        for s in &a.subjective {
            let level = s.image_id.chars().last().unwrap().to_digit(10).unwrap() as f64;
            assert!((s.value - (100.0 - 20.0 * (level - 1.0))).abs() <= 3.0);
        }
    }

    #[test]
    fn zero_jitter_inverts_severity() {
        let sources: Vec<Image> = (0..3).map(|i| random_scene(64, 64, &mut Rng::new(i))).collect();
        let b = build_severity_ladder_with(&sources, 1, 0.0).unwrap();
        let sev: Vec<f64> = b.pairs.iter().map(|p| p.severity as f64).collect();
        let subj: Vec<f64> = b.subjective.iter().map(|s| s.value).collect();
        assert_eq!(srocc(&sev, &subj).unwrap(), -1.0);
    }

    #[test]
    fn ladders_are_monotone_in_pixel_error() {
        for seed in 0..20 {
            let sources: Vec<Image> = (0..2).map(|i| random_scene(64, 64, &mut Rng::new(seed * 7 + i))).collect();
            let b = build_severity_ladder(&sources, seed).unwrap();
            for ladder in b.pairs.chunks(5) {
                assert!(ladder_is_monotone(ladder), "seed {seed}");
            }
        }
    }

    #[test]
    fn eval_groups_follow_sources() {
        let sources: Vec<Image> = (0..2).map(|i| random_scene(128, 128, &mut Rng::new(i))).collect();
        let b = build_severity_ladder(&sources, 3).unwrap();
        let g = b.eval_groups(64, 32).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].items.len(), 5);
        assert_eq!(g[0].reference.len(), 9);
        assert_eq!(g[1].items[4].id, "src001_sev5");
        assert_eq!(b.subjective_by_group()[1].len(), 5);
    }
}
