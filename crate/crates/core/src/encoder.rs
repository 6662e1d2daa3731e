//! Small convolutional feature extractor with hand-derived gradients.
//!
//! Architecture: `n` blocks of 3×3 convolution (stride 2, zero padding 1)
//! each followed by a leaky rectifier, global average pooling, and one affine
//! head producing the `feature_dim` embedding. Parameters live in one flat
//! vector; per layer the weights (`out × in × 3 × 3`, or `d × c` for the head)
//! precede the biases.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::{resize_bilinear, Image};
use crate::math;
use crate::rng::Rng;
use crate::trainer::{cosine_loss_grad, LossSign, TrainError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(&'static str),
    #[error("input is {got_h}x{got_w}x{got_c}, encoder expects {side}x{side}x3")]
    ShapeMismatch {
        side: usize,
        got_h: usize,
        got_w: usize,
        got_c: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("no forward pass cached for the current parameters")]
    StaleCache,
    #[error("parameter vector has {got} entries, config needs {expected}")]
    ParameterCount { expected: usize, got: usize },
    #[error("feature rows have inconsistent dimension")]
    RaggedFeatures,
    #[error(transparent)]
    Loss(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_side: usize,
    /// Output channels of each convolution block.
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
    pub feature_dim: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            widths: vec![8, 16, 32],
            leaky_slope: 0.01,
            feature_dim: 64,
            init_seed: 0,
        }
    }
}

const INPUT_CHANNELS: usize = 3;
/// Samples enter the first convolution mapped from `[0, 1]` to `[-1, 1]`.
const INPUT_SCALE: f64 = 2.0;
const INPUT_SHIFT: f64 = -1.0;
const KERNEL: usize = 3;

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.feature_dim < 2 {
            return Err(EncoderError::InvalidConfig("feature_dim must be at least 2"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(EncoderError::InvalidConfig("need at least one block of nonzero width"));
        }
        if self.widths.len() >= usize::BITS as usize {
            return Err(EncoderError::InvalidConfig("too many blocks"));
        }
        let div = 1usize << self.widths.len();
        if self.input_side == 0 || !self.input_side.is_multiple_of(div) {
            return Err(EncoderError::InvalidConfig("input_side must be divisible by 2^blocks"));
        }
        if !self.leaky_slope.is_finite() {
            return Err(EncoderError::InvalidConfig("leaky_slope must be finite"));
        }
        Ok(())
    }

    fn conv_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ins = core::iter::once(INPUT_CHANNELS).chain(self.widths.iter().copied());
        ins.zip(self.widths.iter().copied())
    }

    /// Σ over blocks of `out·in·9 + out`, plus `d·c_last + d` for the head.
    pub fn param_count(&self) -> usize {
        let conv: usize = self.conv_shapes().map(|(i, o)| o * i * KERNEL * KERNEL + o).sum();
        let last = *self.widths.last().unwrap_or(&0);
        conv + self.feature_dim * last + self.feature_dim
    }

    fn final_channels(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayout {
    in_c: usize,
    out_c: usize,
    in_side: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvLayout {
    fn out_side(&self) -> usize {
        self.in_side / 2
    }
}

#[derive(Debug, Clone, Copy)]
struct HeadLayout {
    in_c: usize,
    out_d: usize,
    w_off: usize,
    b_off: usize,
}

fn layouts(cfg: &EncoderConfig) -> (Vec<ConvLayout>, HeadLayout) {
    let mut off = 0;
    let mut side = cfg.input_side;
    let mut convs = Vec::new();
    for (in_c, out_c) in cfg.conv_shapes() {
        let w_off = off;
        off += out_c * in_c * KERNEL * KERNEL;
        let b_off = off;
        off += out_c;
        convs.push(ConvLayout {
            in_c,
            out_c,
            in_side: side,
            w_off,
            b_off,
        });
        side /= 2;
    }
    let in_c = cfg.final_channels();
    let head = HeadLayout {
        in_c,
        out_d: cfg.feature_dim,
        w_off: off,
        b_off: off + in_c * cfg.feature_dim,
    };
    (convs, head)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    params: Vec<f64>,
    generation: u64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_encoder(config: &EncoderConfig) -> Result<Encoder, EncoderError> {
    config.validate()?;
    let mut rng = Rng::new(config.init_seed);
    let mut params = vec![0.0; config.param_count()];
    let (convs, head) = layouts(config);
    for l in &convs {
        let fan_in = (l.in_c * KERNEL * KERNEL) as f64;
        let fan_out = (l.out_c * KERNEL * KERNEL) as f64;
        let s = math::sqrt(6.0 / (fan_in + fan_out));
        for p in &mut params[l.w_off..l.b_off] {
            *p = rng.uniform_range(-s, s);
        }
    }
    let s = math::sqrt(6.0 / (head.in_c + head.out_d) as f64);
    for p in &mut params[head.w_off..head.b_off] {
        *p = rng.uniform_range(-s, s);
    }
    Ok(Encoder {
        config: config.clone(),
        params,
        generation: 0,
    })
}

/// Resizes to the encoder input side and replicates grayscale to RGB.
pub fn preprocess(img: &Image, side: usize) -> Image {
    let resized = resize_bilinear(img, side, side).expect("side validated nonzero");
    resized.to_rgb()
}

/// Activations kept from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    /// Channel-major input planes.
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    features: Vec<f64>,
}

impl Tape {
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Cached forward passes for one (image, distorted image) pair.
#[derive(Debug, Clone, Default)]
pub struct PairCache {
    tapes: Option<(Tape, Tape)>,
}

impl PairCache {
    pub fn features(&self) -> Option<(&[f64], &[f64])> {
        self.tapes.as_ref().map(|(a, b)| (a.features(), b.features()))
    }
}

impl Encoder {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Bumped on every parameter change; cached passes from older generations are stale.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Encoder, EncoderError> {
        config.validate()?;
        let expected = config.param_count();
        if params.len() != expected {
            return Err(EncoderError::ParameterCount {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(EncoderError::InvalidConfig("non-finite parameter"));
        }
        Ok(Encoder {
            config,
            params,
            generation: 0,
        })
    }

    /// Mutable parameter access; invalidates every cached pass.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    fn check_input(&self, img: &Image) -> Result<(), EncoderError> {
        let side = self.config.input_side;
        if img.height() != side || img.width() != side || img.channels() != INPUT_CHANNELS {
            return Err(EncoderError::ShapeMismatch {
                side,
                got_h: img.height(),
                got_w: img.width(),
                got_c: img.channels(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, img: &Image) -> Result<Vec<f64>, EncoderError> {
        Ok(self.forward_tape(img)?.features)
    }

    /// Preprocesses then runs [`Encoder::forward`].
    pub fn embed(&self, img: &Image) -> Result<Vec<f64>, EncoderError> {
        self.forward(&preprocess(img, self.config.input_side))
    }

    pub fn forward_batch(&self, imgs: &[Image]) -> Result<FeatureSet, EncoderError> {
        if imgs.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let mut set = FeatureSet::with_dim(self.config.feature_dim);
        for img in imgs {
            set.push_row(&self.forward(img)?)?;
        }
        Ok(set)
    }

    /// Preprocesses every image then runs [`Encoder::forward_batch`].
    pub fn embed_batch(&self, imgs: &[Image]) -> Result<FeatureSet, EncoderError> {
        let side = self.config.input_side;
        let prepared: Vec<Image> = imgs.iter().map(|i| preprocess(i, side)).collect();
        self.forward_batch(&prepared)
    }

    pub fn forward_tape(&self, img: &Image) -> Result<Tape, EncoderError> {
        self.check_input(img)?;
        let side = self.config.input_side;
        let plane = side * side;
        let mut input = vec![0.0; INPUT_CHANNELS * plane];
        for (i, px) in img.data().chunks_exact(INPUT_CHANNELS).enumerate() {
            for c in 0..INPUT_CHANNELS {
                input[c * plane + i] = INPUT_SCALE * px[c] + INPUT_SHIFT;
            }
        }
        let (convs, head) = layouts(&self.config);
        let slope = self.config.leaky_slope;
        let mut pre = Vec::with_capacity(convs.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(convs.len());
        for (li, l) in convs.iter().enumerate() {
            let x = if li == 0 { &input } else { &post[li - 1] };
            let z = conv_forward(&self.params, l, x);
            let a: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
            pre.push(z);
            post.push(a);
        }
        let last = convs.last().expect("validated");
        let area = (last.out_side() * last.out_side()) as f64;
        let last_act = post.last().expect("validated");
        let pooled: Vec<f64> = last_act
            .chunks_exact(last.out_side() * last.out_side())
            .map(|ch| ch.iter().sum::<f64>() / area)
            .collect();
        let features = (0..head.out_d)
            .map(|k| {
                let row = &self.params[head.w_off + k * head.in_c..head.w_off + (k + 1) * head.in_c];
                self.params[head.b_off + k] + row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>()
            })
            .collect();
        Ok(Tape {
            generation: self.generation,
            input,
            pre,
            post,
            pooled,
            features,
        })
    }

    /// Gradient of `⟨upstream, features⟩` with respect to every parameter.
    pub fn backward_tape(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>, EncoderError> {
        if tape.generation != self.generation {
            return Err(EncoderError::StaleCache);
        }
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_backward(tape, upstream, &mut grad);
        Ok(grad)
    }

    fn accumulate_backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) {
        let (convs, head) = layouts(&self.config);
        let slope = self.config.leaky_slope;
        let mut d_pooled = vec![0.0; head.in_c];
        for k in 0..head.out_d {
            let g = upstream[k];
            grad[head.b_off + k] += g;
            let w_row = head.w_off + k * head.in_c;
            for c in 0..head.in_c {
                grad[w_row + c] += g * tape.pooled[c];
                d_pooled[c] += g * self.params[w_row + c];
            }
        }
        let last = convs.last().expect("validated");
        let area = last.out_side() * last.out_side();
        let mut d_act: Vec<f64> = d_pooled
            .iter()
            .flat_map(|&g| core::iter::repeat_n(g / area as f64, area))
            .collect();
        for li in (0..convs.len()).rev() {
            let l = &convs[li];
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&tape.pre[li])
                .map(|(&g, &z)| if z > 0.0 { g } else { slope * g })
                .collect();
            let x = if li == 0 { &tape.input } else { &tape.post[li - 1] };
            d_act = conv_backward(&self.params, l, x, &d_pre, grad, li > 0);
        }
    }

    /// Runs and caches both branches of a siamese pair.
    pub fn forward_pair(&self, x: &Image, x_tilde: &Image) -> Result<PairCache, EncoderError> {
        Ok(PairCache {
            tapes: Some((self.forward_tape(x)?, self.forward_tape(x_tilde)?)),
        })
    }

    /// Pair loss and its gradient, scaled by `loss_grad` (e.g. `1 / batch`).
    ///
    /// Both branches share weights, so their parameter gradients add.
    pub fn backward(&self, cache: &PairCache, sign: LossSign, loss_grad: f64) -> Result<(f64, Vec<f64>), EncoderError> {
        let (ta, tb) = cache.tapes.as_ref().ok_or(EncoderError::StaleCache)?;
        if ta.generation != self.generation || tb.generation != self.generation {
            return Err(EncoderError::StaleCache);
        }
        let (loss, mut ga, mut gb) = cosine_loss_grad(&ta.features, &tb.features, sign)?;
        ga.iter_mut().for_each(|g| *g *= loss_grad);
        gb.iter_mut().for_each(|g| *g *= loss_grad);
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_backward(ta, &ga, &mut grad);
        self.accumulate_backward(tb, &gb, &mut grad);
        Ok((loss, grad))
    }
}

fn conv_forward(params: &[f64], l: &ConvLayout, x: &[f64]) -> Vec<f64> {
    let (is, os) = (l.in_side as isize, l.out_side());
    let mut out = vec![0.0; l.out_c * os * os];
    for o in 0..l.out_c {
        let bias = params[l.b_off + o];
        let plane = &mut out[o * os * os..(o + 1) * os * os];
        plane.iter_mut().for_each(|v| *v = bias);
        for i in 0..l.in_c {
            let xin = &x[i * l.in_side * l.in_side..(i + 1) * l.in_side * l.in_side];
            let w = &params[l.w_off + (o * l.in_c + i) * 9..l.w_off + (o * l.in_c + i) * 9 + 9];
            for oy in 0..os {
                for ox in 0..os {
                    let mut acc = 0.0;
                    for ky in 0..KERNEL {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= is {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= is {
                                continue;
                            }
                            acc += w[ky * KERNEL + kx] * xin[iy as usize * l.in_side + ix as usize];
                        }
                    }
                    plane[oy * os + ox] += acc;
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the gradient w.r.t. the layer input.
fn conv_backward(params: &[f64], l: &ConvLayout, x: &[f64], d_out: &[f64], grad: &mut [f64], need_input_grad: bool) -> Vec<f64> {
    let (is, os) = (l.in_side as isize, l.out_side());
    let mut d_in = if need_input_grad {
        vec![0.0; l.in_c * l.in_side * l.in_side]
    } else {
        Vec::new()
    };
    for o in 0..l.out_c {
        let g_plane = &d_out[o * os * os..(o + 1) * os * os];
        grad[l.b_off + o] += g_plane.iter().sum::<f64>();
        for i in 0..l.in_c {
            let base = l.w_off + (o * l.in_c + i) * 9;
            let in_off = i * l.in_side * l.in_side;
            for oy in 0..os {
                for ox in 0..os {
                    let g = g_plane[oy * os + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ky in 0..KERNEL {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= is {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= is {
                                continue;
                            }
                            let idx = in_off + iy as usize * l.in_side + ix as usize;
                            grad[base + ky * KERNEL + kx] += g * x[idx];
                            if need_input_grad {
                                d_in[idx] += g * params[base + ky * KERNEL + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// `N × d` matrix of feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn with_dim(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self, EncoderError> {
        let mut set = Self::with_dim(dim);
        for r in rows {
            set.push_row(r)?;
        }
        Ok(set)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self, EncoderError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(EncoderError::RaggedFeatures);
        }
        Ok(Self { dim, data })
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), EncoderError> {
        if row.len() != self.dim {
            return Err(EncoderError::RaggedFeatures);
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
