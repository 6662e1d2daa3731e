//! Training runs on disk: checkpoints per epoch and the training log.

use std::path::{Path, PathBuf};

use sifid_core::encoder::init_encoder;
use sifid_core::trainer::{train_from, CheckpointSeries, EpochRecord, TrainConfig, TrainError};
use sifid_core::{EncoderConfig, Image, NoiseSpec};

use crate::formats::{self, checkpoint_name, CheckpointMeta, FormatError, INITIAL_CHECKPOINT};
use crate::io::{self, IoError};

/// Training log file for one noise run.
pub fn training_log_name(noise: &NoiseSpec) -> String {
    format!("training_log_{}.csv", noise.tag())
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot write training log: {0}")]
    Log(#[from] csv::Error),
    #[error("checkpoint directory {0} holds no checkpoints for this noise")]
    NoCheckpoints(PathBuf),
}

fn meta(enc_cfg: &EncoderConfig, cfg: &TrainConfig, epoch: usize) -> CheckpointMeta {
    CheckpointMeta {
        encoder: enc_cfg.clone(),
        noise: (epoch > 0).then_some(cfg.noise),
        epoch,
        seed: cfg.seed,
        train: (epoch > 0).then(|| cfg.clone()),
    }
}

/// Trains and writes `initial.ckpt`, one `{tag}_{epoch:03}.ckpt` per epoch
/// and `training_log_{tag}.csv` under `out_dir`.
pub fn run_training(images: &[Image], enc_cfg: &EncoderConfig, cfg: &TrainConfig, out_dir: &Path) -> Result<CheckpointSeries, RunError> {
    let initial = init_encoder(enc_cfg).map_err(|e| TrainError::Encoder(Box::new(e)))?;
    formats::save_checkpoint(&meta(enc_cfg, cfg, 0), &initial, &out_dir.join(INITIAL_CHECKPOINT))?;
    let mut write_err: Option<FormatError> = None;
    let series = train_from(images, initial, cfg, |rec, enc| {
        if write_err.is_none() {
            let path = out_dir.join(checkpoint_name(&cfg.noise, rec.epoch));
            if let Err(e) = formats::save_checkpoint(&meta(enc_cfg, cfg, rec.epoch), enc, &path) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    write_training_log(&series.log, &out_dir.join(training_log_name(&cfg.noise)))?;
    Ok(series)
}

pub fn write_training_log(log: &[EpochRecord], path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(io::create_file(path)?);
    w.write_record(["epoch", "mean_loss", "feature_covariance_trace"])?;
    for r in log {
        w.write_record([r.epoch.to_string(), r.mean_loss.to_string(), r.feature_covariance_trace.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reassembles a series from `initial.ckpt` and the per-epoch files of the
/// noise recorded in them. The log is left empty.
pub fn load_series(dir: &Path, noise_tag: &str) -> Result<CheckpointSeries, RunError> {
    let initial = formats::load_checkpoint(&dir.join(INITIAL_CHECKPOINT))?;
    let mut checkpoints = Vec::new();
    let mut last_meta = None;
    for epoch in 1.. {
        let path = dir.join(format!("{noise_tag}_{epoch:03}.ckpt"));
        if !path.is_file() {
            break;
        }
        let ck = formats::load_checkpoint(&path)?;
        checkpoints.push(ck.encoder);
        last_meta = Some(ck.meta);
    }
    let meta = last_meta.ok_or_else(|| RunError::NoCheckpoints(dir.to_path_buf()))?;
    let config = meta.train.clone().ok_or_else(|| FormatError::Metadata("checkpoint lacks training config".into()))?;
    Ok(CheckpointSeries {
        initial: initial.encoder,
        checkpoints,
        noise: config.noise,
        config,
        log: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sifid_core::augment::CATALOG;
    use sifid_core::synthgen::random_scene;
    use sifid_core::trainer::evaluate_epoch;
    use sifid_core::Rng;

    fn small() -> (Vec<Image>, EncoderConfig, TrainConfig) {
        let imgs: Vec<Image> = (0..4).map(|i| random_scene(24, 24, &mut Rng::new(i))).collect();
        let enc = EncoderConfig {
            input_side: 16,
            widths: vec![4, 4],
            leaky_slope: 0.01,
            feature_dim: 8,
            init_seed: 1,
        };
        let mut cfg = TrainConfig::with_noise(CATALOG[7]);
        cfg.epochs = 3;
        cfg.batch_size = 2;
        (imgs, enc, cfg)
    }

    #[test]
    fn files_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, enc, cfg) = small();
        let series = run_training(&imgs, &enc, &cfg, dir.path()).unwrap();
        for e in 1..=3 {
            assert!(dir.path().join(format!("colorjitter_b0.5_h0.3_{e:03}.ckpt")).is_file());
        }
        let log = std::fs::read_to_string(dir.path().join(training_log_name(&cfg.noise))).unwrap();
        assert_eq!(log.lines().count(), 4);
        assert!(log.starts_with("epoch,mean_loss,feature_covariance_trace"));

        let back = load_series(dir.path(), &CATALOG[7].tag()).unwrap();
        assert_eq!(back.checkpoints.len(), 3);
        assert_eq!(back.checkpoints[2].params(), series.checkpoints[2].params());
        // A reloaded checkpoint reproduces the logged loss.
        let (loss, _) = evaluate_epoch(&back.checkpoints[1], &imgs, &cfg, 2).unwrap();
        assert!((loss - series.log[1].mean_loss).abs() < 1e-12);
        assert!(matches!(load_series(dir.path(), "hflip_p0.5"), Err(RunError::NoCheckpoints(_))));
    }
}
