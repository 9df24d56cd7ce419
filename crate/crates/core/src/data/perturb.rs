//! Photometric degradations used for augmentation and robustness sweeps.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separable Gaussian blur with replicate borders; the kernel radius is
/// `ceil(3σ)`. `σ = 0` returns the input unchanged.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> Result<RgbImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = img.dimensions();
    let (wi, hi) = (i64::from(w), i64::from(h));
    let src: Vec<[f64; 3]> = img.pixels().map(|p| p.0.map(f64::from)).collect();
    let mut tmp = vec![[0.0; 3]; src.len()];
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = [0.0; 3];
            for (k, d) in kernel.iter().zip(-radius..=radius) {
                let sx = (x + d).clamp(0, wi - 1);
                let p = src[(y * wi + sx) as usize];
                for c in 0..3 {
                    acc[c] += k * p[c];
                }
            }
            tmp[(y * wi + x) as usize] = acc;
        }
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = [0.0; 3];
            for (k, d) in kernel.iter().zip(-radius..=radius) {
                let sy = (y + d).clamp(0, hi - 1);
                let p = tmp[(sy * wi + x) as usize];
                for c in 0..3 {
                    acc[c] += k * p[c];
                }
            }
            out.put_pixel(x as u32, y as u32, image::Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8)));
        }
    }
    Ok(out)
}

/// Encodes at `quality` and decodes again. Quality 100 stands for the
/// uncompressed reference and returns the input unchanged.
pub fn jpeg_round_trip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Config(format!("JPEG quality must be in 1..=100, got {quality}")));
    }
    if quality == 100 {
        return Ok(img.clone());
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(img)
        .map_err(|e| Error::Generation(format!("JPEG encoding failed: {e}")))?;
    let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg)
        .map_err(|e| Error::Generation(format!("JPEG decoding failed: {e}")))?;
    Ok(decoded.to_rgb8())
}

/// One degradation family, used to describe robustness sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Jpeg,
    Blur,
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jpeg => "jpeg",
            Self::Blur => "blur",
        })
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jpeg" => Ok(Self::Jpeg),
            "blur" => Ok(Self::Blur),
            _ => Err(Error::Config(format!("unknown perturbation {s:?}, expected jpeg or blur"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    Jpeg { quality: u8 },
    Blur { sigma: f64 },
}

impl Perturbation {
    pub fn new(kind: PerturbationKind, level: f64) -> Result<Self> {
        let p = match kind {
            PerturbationKind::Jpeg => {
                if level.fract() != 0.0 || !(1.0..=100.0).contains(&level) {
                    return Err(Error::Config(format!("JPEG quality must be an integer in 1..=100, got {level}")));
                }
                Perturbation::Jpeg { quality: level as u8 }
            }
            PerturbationKind::Blur => {
                if !(level >= 0.0 && level.is_finite()) {
                    return Err(Error::Config(format!("blur sigma must be finite and >= 0, got {level}")));
                }
                Perturbation::Blur { sigma: level }
            }
        };
        Ok(p)
    }

    pub fn kind(&self) -> PerturbationKind {
        match self {
            Self::Jpeg { .. } => PerturbationKind::Jpeg,
            Self::Blur { .. } => PerturbationKind::Blur,
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            Self::Jpeg { quality } => f64::from(quality),
            Self::Blur { sigma } => sigma,
        }
    }

    pub fn apply(&self, img: &RgbImage) -> Result<RgbImage> {
        match *self {
            Self::Jpeg { quality } => jpeg_round_trip(img, quality),
            Self::Blur { sigma } => gaussian_blur(img, sigma),
        }
    }
}

/// Parses `kind:l1,l2,...`, e.g. `jpeg:100,90,70,50`.
pub fn parse_levels(spec: &str) -> Result<(PerturbationKind, Vec<Perturbation>)> {
    let (kind, levels) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("expected kind:levels, got {spec:?}")))?;
    let kind: PerturbationKind = kind.trim().parse()?;
    let levels = levels
        .split(',')
        .map(|l| {
            let v: f64 = l
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad perturbation level {l:?}")))?;
            Perturbation::new(kind, v)
        })
        .collect::<Result<Vec<_>>>()?;
    if levels.is_empty() {
        return Err(Error::Config("no perturbation levels given".into()));
    }
    Ok((kind, levels))
}
