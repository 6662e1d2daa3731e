//! Siamese fine-tuning: (image, noised image) pairs through one shared
//! encoder, a halved cosine loss, and classical momentum SGD.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_noise, AugmentError, NoiseSpec};
use crate::encoder::{init_encoder, preprocess, Encoder, EncoderConfig, EncoderError};
use crate::image::Image;
use crate::math;
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("zero-norm feature vector")]
    ZeroVector,
    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite gradient entry at {0}")]
    NonFiniteGradient(usize),
    #[error("no training images")]
    EmptyTrainSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    DivergenceDetected { epoch: usize, batch: usize },
    #[error("augmentation failed: {0}")]
    Augment(#[from] AugmentError),
    #[error("encoder failed: {0}")]
    Encoder(alloc::boxed::Box<EncoderError>),
}

impl From<EncoderError> for TrainError {
    fn from(e: EncoderError) -> Self {
        TrainError::Encoder(alloc::boxed::Box::new(e))
    }
}

/// Sign of the cosine term being minimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSign {
    /// `-½·cos`: minimising pulls augmented pairs together.
    #[default]
    Attract,
    /// `+½·cos`, the printed form; minimising pushes pairs apart.
    PaperLiteral,
}

impl LossSign {
    fn factor(self) -> f64 {
        match self {
            LossSign::Attract => -0.5,
            LossSign::PaperLiteral => 0.5,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn cosine_similarity(f: &[f64], g: &[f64]) -> Result<f64, TrainError> {
    if f.len() != g.len() {
        return Err(TrainError::LengthMismatch(f.len(), g.len()));
    }
    let (nf, ng) = (norm(f), norm(g));
    if nf == 0.0 || ng == 0.0 {
        return Err(TrainError::ZeroVector);
    }
    let dot: f64 = f.iter().zip(g).map(|(a, b)| (a / nf) * (b / ng)).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// `±½ · ⟨F/‖F‖, F̃/‖F̃‖⟩`, always in `[-½, ½]`.
pub fn cosine_loss(f: &[f64], f_tilde: &[f64], sign: LossSign) -> Result<f64, TrainError> {
    Ok(sign.factor() * cosine_similarity(f, f_tilde)?)
}

/// Loss together with its gradients with respect to both feature vectors.
///
/// `∂cos/∂F = (F̃/‖F̃‖ - cos · F/‖F‖) / ‖F‖`, and symmetrically for `F̃`.
pub fn cosine_loss_grad(f: &[f64], g: &[f64], sign: LossSign) -> Result<(f64, Vec<f64>, Vec<f64>), TrainError> {
    let cos = cosine_similarity(f, g)?;
    let (nf, ng) = (norm(f), norm(g));
    let s = sign.factor();
    let df = f
        .iter()
        .zip(g)
        .map(|(a, b)| s * (b / ng - cos * a / nf) / nf)
        .collect();
    let dg = f
        .iter()
        .zip(g)
        .map(|(a, b)| s * (a / nf - cos * b / ng) / ng)
        .collect();
    Ok((s * cos, df, dg))
}

/// Classical momentum: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(TrainError::LengthMismatch(params.len(), grads.len()));
    }
    if params.len() != velocity.len() {
        return Err(TrainError::LengthMismatch(params.len(), velocity.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(i));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub loss_sign: LossSign,
}

impl TrainConfig {
    /// 100 epochs, batch 32, lr 0.01, momentum 0.9.
    pub fn with_noise(noise: NoiseSpec) -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            noise,
            loss_sign: LossSign::Attract,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig("momentum must be in [0, 1)"));
        }
        self.noise.validate()?;
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean pair loss of the end-of-epoch snapshot over that epoch's pairs.
    pub mean_loss: f64,
    /// Trace of the feature covariance of the clean images (collapse monitor).
    pub feature_covariance_trace: f64,
    /// Running mean of the batch losses seen while the epoch trained.
    pub running_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CheckpointSeries {
    pub initial: Encoder,
    /// `checkpoints[e - 1]` is the state after epoch `e`.
    pub checkpoints: Vec<Encoder>,
    pub noise: NoiseSpec,
    pub config: TrainConfig,
    pub log: Vec<EpochRecord>,
}

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Presentation order for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::substream(seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
    order
}

/// Distorted partner for the image at `slot` of `batch` in `epoch`.
pub fn distorted_partner(img: &Image, cfg: &TrainConfig, epoch: usize, batch: usize, slot: usize) -> Result<Image, TrainError> {
    let seed = derive_seed(cfg.seed, &[NOISE_STREAM, epoch as u64, batch as u64, slot as u64]);
    Ok(apply_noise(&cfg.noise, img, &mut Rng::new(seed))?.image)
}

/// Preprocessed (clean, distorted) pairs grouped in batches, exactly as epoch `epoch` sees them.
pub fn epoch_batches(images: &[Image], side: usize, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<(Image, Image)>>, TrainError> {
    let order = epoch_order(images.len(), cfg.seed, epoch);
    order
        .chunks(cfg.batch_size)
        .enumerate()
        .map(|(b, chunk)| {
            chunk
                .iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let partner = distorted_partner(&images[i], cfg, epoch, b, slot)?;
                    Ok((preprocess(&images[i], side), preprocess(&partner, side)))
                })
                .collect()
        })
        .collect()
}

/// Mean pair loss and clean-feature covariance trace of `enc` over `pairs`.
pub fn evaluate_pairs(enc: &Encoder, pairs: &[(Image, Image)], sign: LossSign) -> Result<(f64, f64), TrainError> {
    let mut total = 0.0;
    let mut clean = Vec::with_capacity(pairs.len());
    for (x, xt) in pairs {
        let f = enc.forward(x)?;
        let ft = enc.forward(xt)?;
        total += cosine_loss(&f, &ft, sign)?;
        clean.push(f);
    }
    Ok((total / pairs.len() as f64, covariance_trace(&clean)))
}

/// Re-evaluates the logged loss of a snapshot taken at the end of `epoch`.
pub fn evaluate_epoch(enc: &Encoder, images: &[Image], cfg: &TrainConfig, epoch: usize) -> Result<(f64, f64), TrainError> {
    let pairs: Vec<(Image, Image)> = epoch_batches(images, enc.config().input_side, cfg, epoch)?
        .into_iter()
        .flatten()
        .collect();
    evaluate_pairs(enc, &pairs, cfg.loss_sign)
}

fn covariance_trace(rows: &[Vec<f64>]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
        })
        .sum()
}

/// Fine-tunes a fresh encoder; see [`train_from`].
pub fn train(images: &[Image], encoder_config: &EncoderConfig, cfg: &TrainConfig) -> Result<CheckpointSeries, TrainError> {
    let initial = init_encoder(encoder_config)?;
    train_from(images, initial, cfg, |_, _| {})
}

/// Fine-tunes `initial`, calling `on_epoch` with each log row and snapshot.
///
/// Each epoch shuffles the images, draws a fresh distorted partner per image
/// on its own substream, and takes one SGD step per batch on the mean pair
/// loss. Epochs are numbered from 1.
pub fn train_from(
    images: &[Image],
    initial: Encoder,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Encoder),
) -> Result<CheckpointSeries, TrainError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let side = initial.config().input_side;
    let mut enc = initial.clone();
    let mut velocity = vec![0.0; enc.params().len()];
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(images, side, cfg, epoch)?;
        let mut running = 0.0;
        let mut seen = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; enc.params().len()];
            let mut batch_loss = 0.0;
            for (x, xt) in batch {
                let cache = enc.forward_pair(x, xt)?;
                let (loss, g) = enc.backward(&cache, cfg.loss_sign, scale)?;
                batch_loss += loss * scale;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch, batch: b });
            }
            debug_assert!((-0.5 - 1e-12..=0.5 + 1e-12).contains(&batch_loss));
            running += batch_loss * batch.len() as f64;
            seen += batch.len();
            sgd_step(enc.params_mut(), &grad, &mut velocity, cfg.learning_rate, cfg.momentum)?;
        }
        let pairs: Vec<(Image, Image)> = batches.into_iter().flatten().collect();
        let (mean_loss, trace) = evaluate_pairs(&enc, &pairs, cfg.loss_sign)?;
        if !mean_loss.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch, batch: usize::MAX });
        }
        let record = EpochRecord {
            epoch,
            mean_loss,
            feature_covariance_trace: trace,
            running_loss: running / seen as f64,
        };
        on_epoch(&record, &enc);
        log.push(record);
        checkpoints.push(enc.clone());
    }
    Ok(CheckpointSeries {
        initial,
        checkpoints,
        noise: cfg.noise,
        config: cfg.clone(),
        log,
    })
}

/// Mean cosine similarity between clean and distorted features.
pub fn mean_pair_similarity(enc: &Encoder, pairs: &[(Image, Image)]) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut total = 0.0;
    for (x, xt) in pairs {
        total += cosine_similarity(&enc.forward(x)?, &enc.forward(xt)?)?;
    }
    Ok(total / pairs.len() as f64)
}
