//! Evaluation bundles on disk.
//!
//! ```text
//! bundle/
//!   bundle.json                 seed and counts
//!   sources/{source_id}.png
//!   references/{image_id}.png
//!   stitched/{image_id}.png
//!   labels.csv                  image_id,source_id,severity
//!   synthetic_subjective.csv    image_id,subjective_score,n_raters
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sifid_core::synthgen::{Bundle, BundlePair};

use crate::io::{self, IoError};
use crate::tables::{self, TableError};

pub const LABELS: &str = "labels.csv";
pub const SYNTHETIC_SUBJECTIVE: &str = "synthetic_subjective.csv";
pub const BUNDLE_META: &str = "bundle.json";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad labels row {line}: {message}")]
    Labels { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    pub sources: usize,
    pub pairs: usize,
}

pub fn source_path(dir: &Path, source_id: &str) -> PathBuf {
    dir.join("sources").join(format!("{source_id}.png"))
}

pub fn stitched_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join("stitched").join(format!("{image_id}.png"))
}

pub fn reference_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join("references").join(format!("{image_id}.png"))
}

pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<(), BundleError> {
    for (id, img) in &bundle.sources {
        io::save_image(img, &source_path(dir, id))?;
    }
    for p in &bundle.pairs {
        io::save_image(&p.reference, &reference_path(dir, &p.image_id))?;
        io::save_image(&p.stitched, &stitched_path(dir, &p.image_id))?;
    }
    let mut w = csv::Writer::from_writer(io::create_file(&dir.join(LABELS))?);
    w.write_record(["image_id", "source_id", "severity"])?;
    for (image, source, sev) in bundle.labels() {
        w.write_record([image, source, sev.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    tables::write_aggregate_csv(&bundle.subjective, &dir.join(SYNTHETIC_SUBJECTIVE))?;
    tables::write_json(
        &BundleMeta {
            seed: bundle.seed,
            sources: bundle.sources.len(),
            pairs: bundle.pairs.len(),
        },
        &dir.join(BUNDLE_META),
    )?;
    Ok(())
}

/// Loads a bundle written by [`write_bundle`]. Images come back quantised to
/// 8 bits.
pub fn load_bundle(dir: &Path) -> Result<Bundle, BundleError> {
    let meta: BundleMeta = tables::read_json(&dir.join(BUNDLE_META))?;
    let labels = io::read_file(&dir.join(LABELS))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(labels.as_slice());
    let mut sources: Vec<(String, sifid_core::Image)> = Vec::new();
    let mut pairs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: &str| BundleError::Labels {
            line,
            message: message.into(),
        };
        if rec.len() != 3 {
            return Err(bad("need image_id,source_id,severity"));
        }
        let severity: u8 = rec[2].parse().map_err(|_| bad("severity is not an integer"))?;
        let (image_id, source_id) = (rec[0].to_string(), rec[1].to_string());
        if !sources.iter().any(|(id, _)| id == &source_id) {
            sources.push((source_id.clone(), io::load_image(&source_path(dir, &source_id))?));
        }
        pairs.push(BundlePair {
            reference: io::load_image(&reference_path(dir, &image_id))?,
            stitched: io::load_image(&stitched_path(dir, &image_id))?,
            image_id,
            source_id,
            severity,
        });
    }
    let subjective = tables::read_aggregate_csv(&dir.join(SYNTHETIC_SUBJECTIVE))?;
    Ok(Bundle {
        seed: meta.seed,
        sources,
        pairs,
        subjective,
    })
}
