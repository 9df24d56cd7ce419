//! Training-time augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forge::{copy_move_to, MIN_REGION_AREA};
use super::perturb::{gaussian_blur, jpeg_round_trip};
use super::{Mask, Region, Sample, SampleLabel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    FlipHorizontal,
    FlipVertical,
    GaussianBlur { sigma: f64 },
    Jpeg { quality: u8 },
    /// Pastes a square of side `size` from `(sx, sy)` to `(dx, dy)` in the
    /// same image; the destination joins the mask.
    NaivePaste { sx: u32, sy: u32, dx: u32, dy: u32, size: u32 },
}

/// Applies `ops` in order. Flips move the image, mask and edge label
/// together; blur and JPEG touch the image only.
pub fn augment(sample: &Sample, ops: &[AugmentOp]) -> Result<Sample> {
    let mut out = sample.clone();
    for op in ops {
        match *op {
            AugmentOp::FlipHorizontal => {
                image::imageops::flip_horizontal_in_place(&mut out.image);
                out.label.mask = out.label.mask.flip_horizontal();
                out.label.edge = out.label.edge.flip_horizontal();
            }
            AugmentOp::FlipVertical => {
                image::imageops::flip_vertical_in_place(&mut out.image);
                out.label.mask = out.label.mask.flip_vertical();
                out.label.edge = out.label.edge.flip_vertical();
            }
            AugmentOp::GaussianBlur { sigma } => out.image = gaussian_blur(&out.image, sigma)?,
            AugmentOp::Jpeg { quality } => out.image = jpeg_round_trip(&out.image, quality)?,
            AugmentOp::NaivePaste { sx, sy, dx, dy, size } => {
                let region = Region::Rect { x: sx, y: sy, width: size, height: size };
                let (img, dest) = copy_move_to(
                    &out.image,
                    &region,
                    i64::from(dx) - i64::from(sx),
                    i64::from(dy) - i64::from(sy),
                )?;
                let (w, h) = dest.dimensions();
                let mask = Mask::from_fn(w, h, |x, y| dest.get(x, y) || out.label.mask.get(x, y));
                out.image = img;
                out.label = SampleLabel::from_mask(mask);
            }
        }
    }
    Ok(out)
}

/// Probabilities and parameter ranges for random augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    pub blur: f64,
    pub blur_sigma: (f64, f64),
    pub jpeg: f64,
    pub jpeg_quality: (u8, u8),
    pub naive_manipulation: f64,
    /// Side of the pasted square as a fraction of the shorter image side.
    pub naive_size: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_horizontal: 0.5,
            flip_vertical: 0.0,
            blur: 0.2,
            blur_sigma: (0.0, 3.0),
            jpeg: 0.2,
            jpeg_quality: (50, 100),
            naive_manipulation: 0.0,
            naive_size: (0.1, 0.3),
        }
    }
}

impl AugmentPolicy {
    /// Applies nothing.
    pub fn none() -> Self {
        Self {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            blur: 0.0,
            jpeg: 0.0,
            naive_manipulation: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("flip_horizontal", self.flip_horizontal),
            ("flip_vertical", self.flip_vertical),
            ("blur", self.blur),
            ("jpeg", self.jpeg),
            ("naive_manipulation", self.naive_manipulation),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} must be a probability, got {p}")));
            }
        }
        let (s0, s1) = self.blur_sigma;
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::Config(format!("augment.blur_sigma range ({s0}, {s1}) is invalid")));
        }
        let (q0, q1) = self.jpeg_quality;
        if !(1 <= q0 && q0 <= q1 && q1 <= 100) {
            return Err(Error::Config(format!("augment.jpeg_quality range ({q0}, {q1}) is invalid")));
        }
        let (n0, n1) = self.naive_size;
        if !(n0 > 0.0 && n0 <= n1 && n1 < 0.5) {
            return Err(Error::Config(format!("augment.naive_size range ({n0}, {n1}) is invalid")));
        }
        Ok(())
    }

    /// Draws an op list for an image of the given size.
    pub fn sample_ops(&self, rng: &mut impl Rng, width: u32, height: u32) -> Vec<AugmentOp> {
        let mut ops = Vec::new();
        if self.naive_manipulation > 0.0 && rng.random_bool(self.naive_manipulation) {
            if let Some(op) = self.naive_paste(rng, width, height) {
                ops.push(op);
            }
        }
        if self.flip_horizontal > 0.0 && rng.random_bool(self.flip_horizontal) {
            ops.push(AugmentOp::FlipHorizontal);
        }
        if self.flip_vertical > 0.0 && rng.random_bool(self.flip_vertical) {
            ops.push(AugmentOp::FlipVertical);
        }
        if self.blur > 0.0 && rng.random_bool(self.blur) {
            let (lo, hi) = self.blur_sigma;
            ops.push(AugmentOp::GaussianBlur { sigma: rng.random_range(lo..=hi) });
        }
        if self.jpeg > 0.0 && rng.random_bool(self.jpeg) {
            let (lo, hi) = self.jpeg_quality;
            ops.push(AugmentOp::Jpeg { quality: rng.random_range(lo..=hi) });
        }
        ops
    }

    fn naive_paste(&self, rng: &mut impl Rng, width: u32, height: u32) -> Option<AugmentOp> {
        let short = width.min(height);
        let (lo, hi) = self.naive_size;
        let size = (rng.random_range(lo..=hi) * f64::from(short)).round() as u32;
        if (size * size) < MIN_REGION_AREA as u32 || 2 * size > short {
            return None;
        }
        let sx = rng.random_range(0..=width - size);
        let sy = rng.random_range(0..=height - size);
        // destinations are drawn until they clear the source square
        for _ in 0..super::forge::PLACEMENT_ATTEMPTS {
            let dx = rng.random_range(0..=width - size);
            let dy = rng.random_range(0..=height - size);
            if dx.abs_diff(sx) >= size || dy.abs_diff(sy) >= size {
                return Some(AugmentOp::NaivePaste { sx, sy, dx, dy, size });
            }
        }
        None
    }
}

pub fn augment_random(sample: &Sample, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Sample> {
    let ops = policy.sample_ops(rng, sample.image.width(), sample.image.height());
    augment(sample, &ops)
}
