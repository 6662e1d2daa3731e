//! PNG and binary PPM/PGM reading and writing.

use std::fs;
use std::io::{self, BufWriter, Cursor};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::{DynamicImage, ImageFormat, ImageReader};
use sifid_core::Image;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported format for {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("corrupt image data in {path}: {reason}")]
    CorruptData { path: PathBuf, reason: String },
    #[error("cannot write {path}: {source}")]
    WriteFailure { path: PathBuf, source: io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
}

fn unsupported(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Extensions this module reads and writes.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm")
    )
}

pub fn load_image(path: &Path) -> Result<Image, IoError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IoError::FileNotFound(path.to_path_buf()),
        _ => IoError::Read {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    decode_image(&bytes, path)
}

/// Decodes PNG or PNM bytes; `origin` only labels errors.
pub fn decode_image(bytes: &[u8], origin: &Path) -> Result<Image, IoError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| unsupported(origin, e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(f) => return Err(unsupported(origin, format!("{f:?}"))),
        None => return Err(unsupported(origin, "unrecognised signature")),
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => unsupported(origin, u.to_string()),
        other => IoError::CorruptData {
            path: origin.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageLumaA8(b) => (1, DynamicImage::ImageLumaA8(b).into_luma8().into_raw()),
        DynamicImage::ImageRgba8(b) => (3, DynamicImage::ImageRgba8(b).into_rgb8().into_raw()),
        other => return Err(unsupported(origin, format!("{:?} samples; only 8-bit is accepted", other.color()))),
    };
    Image::from_u8(h, w, channels, &raw).map_err(|e| IoError::CorruptData {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Encodes by extension: `.png`, `.ppm` (RGB) or `.pgm` (grayscale).
pub fn encode_image(img: &Image, format: ImageFormat) -> Vec<u8> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = img.to_u8();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("length checked by Image")),
        _ => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("length checked by Image")),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, format).expect("in-memory encode");
    out.into_inner()
}

pub fn save_image(img: &Image, path: &Path) -> Result<(), IoError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let img = match ext.as_deref() {
        Some("png") | Some("ppm") => img.clone(),
        Some("pgm") => sifid_core::image::to_grayscale(img),
        _ => return Err(unsupported(path, "extension must be png, ppm or pgm")),
    };
    let img = if ext.as_deref() == Some("ppm") { img.to_rgb() } else { img };
    let format = if ext.as_deref() == Some("png") { ImageFormat::Png } else { ImageFormat::Pnm };
    write_bytes(path, &encode_image(&img, format))
}

/// Writes a file, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let fail = |source| IoError::WriteFailure {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    // Write-then-rename, so concurrent writers and crashes never leave a torn file.
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let name = path.file_name().map_or_else(Default::default, |n| n.to_string_lossy().into_owned());
    let tmp = path.with_file_name(format!(".{name}.{}.{}.tmp", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed)));
    fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, path)).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        fail(e)
    })
}

/// Opens a buffered writer, creating parent directories.
pub fn create_file(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    let fail = |source| IoError::WriteFailure {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(fail)?))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IoError::FileNotFound(path.to_path_buf()),
        _ => IoError::Read {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IoError::FileNotFound(dir.to_path_buf()),
        _ => IoError::Read {
            path: dir.to_path_buf(),
            source: e,
        },
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    paths.sort();
    Ok(paths)
}
