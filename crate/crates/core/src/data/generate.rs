//! Synthetic dataset generation: forged and authentic scenes written as a
//! directory tree with a manifest and a parameter sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forge::{forge, random_region, ManipulationKind, ManipulationSpec};
use super::manifest::{DatasetManifest, ManifestEntry};
use super::synth::scene;
use super::{Mask, Sample};
use crate::error::{Error, Result};

/// Fresh regions tried per forged sample before giving up.
const REGION_ATTEMPTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub forged: usize,
    pub authentic: usize,
}

impl SplitSpec {
    pub fn new(name: impl Into<String>, forged: usize, authentic: usize) -> Self {
        Self {
            name: name.into(),
            forged,
            authentic,
        }
    }

    pub fn len(&self) -> usize {
        self.forged + self.authentic
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub size: u32,
    pub seed: u64,
    pub splits: Vec<SplitSpec>,
    /// Kinds used round-robin over forged samples.
    pub kinds: Vec<ManipulationKind>,
    /// Bounding-box side range as a fraction of the image side.
    pub region_frac: (f64, f64),
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            size: 128,
            seed: 0,
            splits: vec![
                SplitSpec::new("train", 64, 16),
                SplitSpec::new("val", 16, 16),
                SplitSpec::new("test", 16, 16),
            ],
            kinds: ManipulationKind::ALL.to_vec(),
            region_frac: (0.15, 0.4),
        }
    }
}

impl GenerateConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % 16 != 0 {
            return Err(Error::Config(format!("size must be a positive multiple of 16, got {}", self.size)));
        }
        if self.kinds.is_empty() && self.splits.iter().any(|s| s.forged > 0) {
            return Err(Error::Config("forged samples requested but no manipulation kinds".into()));
        }
        let (lo, hi) = self.region_frac;
        if !(lo > 0.0 && lo <= hi && hi < 0.5) {
            return Err(Error::Config(format!("region_frac ({lo}, {hi}) must satisfy 0 < lo <= hi < 0.5")));
        }
        for (i, s) in self.splits.iter().enumerate() {
            if s.name.is_empty() || s.name.contains([',', '\n']) {
                return Err(Error::Config(format!("split name {:?} is not usable", s.name)));
            }
            if self.splits[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("split {:?} listed twice", s.name)));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.splits.iter().map(SplitSpec::len).sum()
    }

    /// Split name, forged kind (if any) and position within the split.
    fn locate(&self, index: usize) -> (&SplitSpec, Option<ManipulationKind>, usize) {
        let mut rest = index;
        for split in &self.splits {
            if rest < split.len() {
                let kind = (rest < split.forged).then(|| self.kinds[rest % self.kinds.len()]);
                return (split, kind, rest);
            }
            rest -= split.len();
        }
        panic!("sample index {index} out of range");
    }

    pub fn to_params_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "size={}", self.size);
        let _ = writeln!(out, "seed={}", self.seed);
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.as_str()).collect();
        let _ = writeln!(out, "kinds={}", kinds.join(","));
        let _ = writeln!(out, "region_frac={},{}", self.region_frac.0, self.region_frac.1);
        for s in &self.splits {
            let _ = writeln!(out, "split.{}={},{}", s.name, s.forged, s.authentic);
        }
        out
    }
}

/// Generated sample together with where it belongs.
#[derive(Clone, Debug)]
pub struct GeneratedSample {
    pub split: String,
    pub position: usize,
    pub sample: Sample,
}

/// Sample number `index` of the dataset described by `config`. Each index
/// draws from its own stream of the seeded generator, so samples can be
/// produced in any order.
pub fn generate_sample(config: &GenerateConfig, index: usize) -> Result<GeneratedSample> {
    let (split, kind, position) = config.locate(index);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let size = config.size;
    let source = scene(&mut rng, size, size);
    let sample = match kind {
        None => Sample::new(source, Mask::new(size, size))?,
        Some(kind) => {
            let donor = (kind == ManipulationKind::Splice).then(|| scene(&mut rng, size, size));
            let mut last_err = None;
            let mut made = None;
            for _ in 0..REGION_ATTEMPTS {
                let spec = ManipulationSpec {
                    kind,
                    region: random_region(&mut rng, size, size, config.region_frac),
                };
                match forge(&spec, &source, donor.as_ref(), rng.random()) {
                    Ok(out) => {
                        made = Some(out);
                        break;
                    }
                    Err(e @ (Error::Generation(_) | Error::Config(_))) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            let (img, mask) = made.ok_or_else(|| {
                Error::Generation(format!(
                    "sample {index}: no valid {kind} forgery in {REGION_ATTEMPTS} attempts ({})",
                    last_err.map_or_else(String::new, |e| e.to_string())
                ))
            })?;
            Sample::new(img, mask)?.with_kind(kind.as_str())
        }
    };
    Ok(GeneratedSample {
        split: split.name.clone(),
        position,
        sample,
    })
}

/// All samples in index order, generated in parallel.
pub fn generate_samples(config: &GenerateConfig) -> Result<Vec<GeneratedSample>> {
    config.validate()?;
    (0..config.total())
        .into_par_iter()
        .map(|i| generate_sample(config, i))
        .collect()
}

/// Writes `images/`, `masks/`, `manifest.txt` and `params.txt` under `dir`
/// and returns the manifest.
pub fn write_dataset(config: &GenerateConfig, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries = (0..config.total())
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let g = generate_sample(config, i)?;
            let stem = format!("{}_{:05}", g.split, g.position);
            let image = PathBuf::from("images").join(format!("{stem}.png"));
            let path = dir.join(&image);
            g.sample.image.save(&path).map_err(|e| Error::image(&path, e))?;
            let mask = if g.sample.is_manipulated() {
                let rel = PathBuf::from("masks").join(format!("{stem}.png"));
                let path = dir.join(&rel);
                g.sample.label.mask.to_gray().save(&path).map_err(|e| Error::image(&path, e))?;
                Some(rel)
            } else {
                None
            };
            Ok(ManifestEntry {
                image,
                mask,
                split: g.split,
                kind: g.sample.kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        base_dir: dir.to_path_buf(),
        entries,
    };
    manifest.save(dir.join("manifest.txt"))?;
    let params = dir.join("params.txt");
    fs::write(&params, config.to_params_text()).map_err(|e| Error::io(&params, e))?;
    Ok(manifest)
}
