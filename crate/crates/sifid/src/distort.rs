//! Distorted training corpus: every input image under every catalog noise.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sifid_core::augment::{distort_all, AugmentError};
use sifid_core::NoiseSpec;

use crate::io::{self, IoError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DistortError {
    #[error("no decodable images in {0}")]
    EmptyInputDir(PathBuf),
    #[error("{path}: {source}")]
    Augment { path: PathBuf, source: AugmentError },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub output_path: String,
    pub source_path: String,
    pub spec: NoiseSpec,
    pub substream_seed: u64,
    pub canonical: bool,
}

/// `{stem}__{tag}.png`.
pub fn output_name(source: &Path, spec: &NoiseSpec) -> String {
    let stem = source.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    format!("{stem}__{}.png", spec.tag())
}

/// Runs `f` on a pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    Ok(pool.install(f))
}

/// Writes one distorted image per (input, spec) and the manifest. Inputs are
/// the images directly inside `input_dir`, taken in file-name order; the
/// result does not depend on `jobs`.
pub fn build_distorted_set(
    input_dir: &Path,
    specs: &[NoiseSpec],
    seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<ManifestEntry>, DistortError> {
    let inputs = io::list_images(input_dir)?;
    if inputs.is_empty() {
        return Err(DistortError::EmptyInputDir(input_dir.to_path_buf()));
    }
    let per_image = with_jobs(jobs, || {
        inputs
            .par_iter()
            .enumerate()
            .map(|(idx, path)| distort_one(path, idx, specs, seed, out_dir))
            .collect::<Vec<_>>()
    })
    .map_err(DistortError::Pool)?;
    let mut manifest = Vec::with_capacity(inputs.len() * specs.len());
    for entries in per_image {
        manifest.extend(entries?);
    }
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    io::write_bytes(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

fn distort_one(path: &Path, idx: usize, specs: &[NoiseSpec], seed: u64, out_dir: &Path) -> Result<Vec<ManifestEntry>, DistortError> {
    let img = io::load_image(path)?;
    let outputs = distort_all(&img, idx, specs, seed).map_err(|source| DistortError::Augment {
        path: path.to_path_buf(),
        source,
    })?;
    specs
        .iter()
        .zip(outputs)
        .map(|(spec, (sub, d))| {
            let name = output_name(path, spec);
            io::save_image(&d.image, &out_dir.join(&name))?;
            Ok(ManifestEntry {
                output_path: name,
                source_path: path.display().to_string(),
                spec: *spec,
                substream_seed: sub,
                canonical: d.canonical,
            })
        })
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DistortError> {
    let bytes = io::read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        DistortError::Io(IoError::CorruptData {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sifid_core::augment::CATALOG;
    use sifid_core::synthgen::random_scene;
    use sifid_core::Rng;

    #[test]
    fn one_input_fans_out_to_fourteen() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        io::save_image(&random_scene(40, 48, &mut Rng::new(0)), &src.path().join("a.png")).unwrap();
        std::fs::write(src.path().join("notes.txt"), "skip me").unwrap();
        let m = build_distorted_set(src.path(), &CATALOG, 1, out.path(), 2).unwrap();
        assert_eq!(m.len(), 14);
        assert!(m.iter().all(|e| out.path().join(&e.output_path).is_file()));
        let back = load_manifest(&out.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(json[7]["spec"]["kind"], "ColorJitter");
        assert_eq!(json[7]["spec"]["params"]["hue"], 0.3);
    }

    #[test]
    fn empty_dir_rejected() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_distorted_set(src.path(), &CATALOG, 1, out.path(), 1),
            Err(DistortError::EmptyInputDir(_))
        ));
    }
}
