//! Line-oriented dataset manifests and sample ingestion.
//!
//! Each non-blank line reads `image,mask,split[,kind]` where `mask` is a
//! path or `AUTH` for authentic images. Lines starting with `#` are
//! comments. Relative paths resolve against the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Mask, Sample};
use crate::error::{Error, Result};

pub const AUTHENTIC_TAG: &str = "AUTH";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    /// `None` for authentic images.
    pub mask: Option<PathBuf>,
    pub split: String,
    pub kind: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) || fields[..3].iter().any(|f| f.is_empty()) {
                return Err(Error::Config(format!(
                    "manifest line {}: expected image,mask_or_{AUTHENTIC_TAG},split[,kind], got {line:?}",
                    lineno + 1
                )));
            }
            entries.push(ManifestEntry {
                image: PathBuf::from(fields[0]),
                mask: (fields[1] != AUTHENTIC_TAG).then(|| PathBuf::from(fields[1])),
                split: fields[2].to_string(),
                kind: fields.get(3).filter(|k| !k.is_empty()).map(|k| k.to_string()),
            });
        }
        Ok(Self {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let mask = e
                .mask
                .as_ref()
                .map_or_else(|| AUTHENTIC_TAG.to_string(), |m| m.display().to_string());
            let _ = write!(out, "{},{},{}", e.image.display(), mask, e.split);
            if let Some(kind) = &e.kind {
                let _ = write!(out, ",{kind}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn filtered(&self, keep: impl Fn(&ManifestEntry) -> bool) -> Self {
        Self {
            base_dir: self.base_dir.clone(),
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn filter_split(&self, split: &str) -> Self {
        self.filtered(|e| e.split == split)
    }

    /// Keeps entries tagged `kind`, plus authentic entries when
    /// `keep_authentic` is set.
    pub fn filter_kind(&self, kind: &str, keep_authentic: bool) -> Self {
        self.filtered(|e| e.kind.as_deref() == Some(kind) || (keep_authentic && e.mask.is_none()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Square side every sample is resized to; `None` keeps native size.
    pub target_size: Option<u32>,
    /// Shuffles entry order deterministically.
    pub shuffle_seed: Option<u64>,
}

/// A failed manifest entry.
#[derive(Debug)]
pub struct IngestError {
    pub index: usize,
    pub path: PathBuf,
    pub error: Error,
}

impl std::fmt::Display for IngestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "entry {} ({}): {}", self.index, self.path.display(), self.error)
    }
}

impl std::error::Error for IngestError {}

fn entry_order(n: usize, options: &IngestOptions) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = options.shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))
}

/// Reads one entry. On failure reports the path that caused it.
pub fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry, options: &IngestOptions) -> Result<Sample, (PathBuf, Error)> {
    let image_path = manifest.resolve(&entry.image);
    let image = open(&image_path).map_err(|e| (image_path.clone(), e))?.to_rgb8();
    let mask = match &entry.mask {
        None => Mask::new(image.width(), image.height()),
        Some(m) => {
            let mask_path = manifest.resolve(m);
            let raw = open(&mask_path).map_err(|e| (mask_path.clone(), e))?;
            let gray = match raw {
                DynamicImage::ImageLuma8(g) => g,
                DynamicImage::ImageLuma16(_) => raw.to_luma8(),
                other => {
                    return Err((
                        mask_path,
                        Error::Input(format!("mask must be single-channel, found {:?}", other.color())),
                    ))
                }
            };
            if gray.dimensions() != image.dimensions() {
                return Err((
                    mask_path,
                    Error::Input(format!(
                        "mask is {:?} but image is {:?}",
                        gray.dimensions(),
                        image.dimensions()
                    )),
                ));
            }
            Mask::from_gray(&gray)
        }
    };
    let (image, mask) = match options.target_size {
        Some(size) if image.dimensions() != (size, size) => resize_pair(&image, &mask, size),
        _ => (image, mask),
    };
    let sample = Sample::new(image, mask).map_err(|e| (image_path, e))?;
    Ok(match &entry.kind {
        Some(k) => sample.with_kind(k.clone()),
        None => sample,
    })
}

/// Bilinear for the image, nearest neighbour for the mask.
pub fn resize_pair(image: &RgbImage, mask: &Mask, size: u32) -> (RgbImage, Mask) {
    let image = image::imageops::resize(image, size, size, FilterType::Triangle);
    let gray = image::imageops::resize(&mask.to_gray(), size, size, FilterType::Nearest);
    (image, Mask::from_gray(&gray))
}

/// Lazily loads entries one by one; failures are yielded as items and do
/// not end the stream.
pub fn ingest<'a>(
    manifest: &'a DatasetManifest,
    options: &'a IngestOptions,
) -> impl Iterator<Item = Result<Sample, IngestError>> + 'a {
    entry_order(manifest.len(), options).into_iter().map(move |index| {
        load_entry(manifest, &manifest.entries[index], options)
            .map_err(|(path, error)| IngestError { index, path, error })
    })
}

/// Parallel variant of [`ingest`]; the output order equals the serial order.
pub fn ingest_all(manifest: &DatasetManifest, options: &IngestOptions) -> Vec<Result<Sample, IngestError>> {
    entry_order(manifest.len(), options)
        .into_par_iter()
        .map(|index| {
            load_entry(manifest, &manifest.entries[index], options)
                .map_err(|(path, error)| IngestError { index, path, error })
        })
        .collect()
}
