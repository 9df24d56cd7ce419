//! Copy-move, splice and inpaint forgeries with exact destination masks.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Mask;
use crate::error::{Error, Result};

pub const MIN_REGION_AREA: usize = 16;
/// Attempts at finding a non-overlapping copy-move destination.
pub const PLACEMENT_ATTEMPTS: usize = 16;
pub const INPAINT_MAX_ITERS: usize = 200;
/// Largest per-iteration change (8-bit scale) still counted as movement.
const INPAINT_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManipulationKind {
    CopyMove,
    Splice,
    Inpaint,
}

impl ManipulationKind {
    pub const ALL: [ManipulationKind; 3] = [Self::CopyMove, Self::Splice, Self::Inpaint];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CopyMove => "copy-move",
            Self::Splice => "splice",
            Self::Inpaint => "inpaint",
        }
    }
}

impl fmt::Display for ManipulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManipulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown manipulation kind {s:?}")))
    }
}

/// Region in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Rect { x: u32, y: u32, width: u32, height: u32 },
    /// Vertices in continuous pixel coordinates; pixels whose centre lies
    /// inside (even-odd rule) belong to the region.
    Polygon(Vec<(f64, f64)>),
}

impl Region {
    fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        let ok = match self {
            Region::Rect { x, y, width: rw, height: rh } => {
                *rw > 0 && *rh > 0 && x + rw <= width && y + rh <= height
            }
            Region::Polygon(pts) => {
                pts.len() >= 3
                    && pts.iter().all(|&(px, py)| {
                        px.is_finite()
                            && py.is_finite()
                            && (0.0..=f64::from(width)).contains(&px)
                            && (0.0..=f64::from(height)).contains(&py)
                    })
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("region {self:?} is not inside a {width}x{height} image")))
        }
    }

    pub fn rasterize(&self, width: u32, height: u32) -> Mask {
        match self {
            Region::Rect { x, y, width: rw, height: rh } => Mask::from_fn(width, height, |px, py| {
                px >= *x && px < x + rw && py >= *y && py < y + rh
            }),
            Region::Polygon(pts) => Mask::from_fn(width, height, |px, py| {
                point_in_polygon(f64::from(px) + 0.5, f64::from(py) + 0.5, pts)
            }),
        }
    }
}

fn point_in_polygon(x: f64, y: f64, pts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManipulationSpec {
    pub kind: ManipulationKind,
    pub region: Region,
}

/// Validated region mask: in bounds and at least [`MIN_REGION_AREA`] pixels.
fn region_mask(region: &Region, width: u32, height: u32) -> Result<Mask> {
    region.check_bounds(width, height)?;
    let mask = region.rasterize(width, height);
    if mask.count() < MIN_REGION_AREA {
        return Err(Error::Config(format!(
            "region covers {} pixels, at least {MIN_REGION_AREA} required",
            mask.count()
        )));
    }
    Ok(mask)
}

fn bbox(mask: &Mask) -> (u32, u32, u32, u32) {
    let (w, h) = mask.dimensions();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// Applies `spec` to `source`. Returns the forged image and the mask of
/// exactly the pixels that were written.
pub fn forge(
    spec: &ManipulationSpec,
    source: &RgbImage,
    donor: Option<&RgbImage>,
    seed: u64,
) -> Result<(RgbImage, Mask)> {
    let (w, h) = source.dimensions();
    let region = region_mask(&spec.region, w, h)?;
    match spec.kind {
        ManipulationKind::CopyMove => {
            if donor.is_some() {
                return Err(Error::Config("copy-move does not take a donor image".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (bx, by, bw, bh) = bbox(&region);
            for _ in 0..PLACEMENT_ATTEMPTS {
                let nx = rng.random_range(0..=w - bw);
                let ny = rng.random_range(0..=h - bh);
                let (dx, dy) = (i64::from(nx) - i64::from(bx), i64::from(ny) - i64::from(by));
                if let Ok(out) = copy_move_mask(source, &region, dx, dy) {
                    return Ok(out);
                }
            }
            Err(Error::Generation(format!(
                "no non-overlapping copy-move destination after {PLACEMENT_ATTEMPTS} attempts"
            )))
        }
        ManipulationKind::Splice => {
            let donor = donor.ok_or_else(|| Error::Config("splice needs a donor image".into()))?;
            let (_, _, bw, bh) = bbox(&region);
            let (bx, by, _, _) = bbox(&region);
            if donor.width() < bx + bw || donor.height() < by + bh {
                return Err(Error::Config("donor image does not cover the region".into()));
            }
            let mut out = source.clone();
            for y in 0..h {
                for x in 0..w {
                    if region.get(x, y) {
                        out.put_pixel(x, y, *donor.get_pixel(x, y));
                    }
                }
            }
            Ok((out, region))
        }
        ManipulationKind::Inpaint => {
            if donor.is_some() {
                return Err(Error::Config("inpaint does not take a donor image".into()));
            }
            Ok((inpaint(source, &region), region))
        }
    }
}

/// Copies `region` to the location shifted by `(dx, dy)`; fails when the
/// destination leaves the frame or touches the source region.
pub fn copy_move_to(source: &RgbImage, region: &Region, dx: i64, dy: i64) -> Result<(RgbImage, Mask)> {
    let (w, h) = source.dimensions();
    let mask = region_mask(region, w, h)?;
    copy_move_mask(source, &mask, dx, dy)
}

fn copy_move_mask(source: &RgbImage, region: &Mask, dx: i64, dy: i64) -> Result<(RgbImage, Mask)> {
    let (w, h) = source.dimensions();
    let mut dest = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !region.get(x, y) {
                continue;
            }
            let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
            if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                return Err(Error::Generation("copy-move destination leaves the image".into()));
            }
            dest.set(nx as u32, ny as u32, true);
        }
    }
    if dest.overlaps(region) {
        return Err(Error::Generation("copy-move destination overlaps its source".into()));
    }
    let mut out = source.clone();
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) {
                let (nx, ny) = ((i64::from(x) + dx) as u32, (i64::from(y) + dy) as u32);
                out.put_pixel(nx, ny, *source.get_pixel(x, y));
            }
        }
    }
    Ok((out, dest))
}

/// Diffusion fill: region pixels start at the mean of their outer boundary
/// and are repeatedly replaced by the average of their 4-neighbours.
pub fn inpaint(source: &RgbImage, region: &Mask) -> RgbImage {
    let (w, h) = source.dimensions();
    let idx = |x: u32, y: u32| (y * w + x) as usize;
    let mut vals: Vec<[f64; 3]> = source.pixels().map(|p| p.0.map(f64::from)).collect();

    let neighbours = |x: u32, y: u32| {
        let mut n = Vec::with_capacity(4);
        if x > 0 {
            n.push((x - 1, y));
        }
        if x + 1 < w {
            n.push((x + 1, y));
        }
        if y > 0 {
            n.push((x, y - 1));
        }
        if y + 1 < h {
            n.push((x, y + 1));
        }
        n
    };

    let mut ring = [0.0; 3];
    let mut ring_count = 0usize;
    let mut inside_sum = [0.0; 3];
    let mut targets = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) {
                targets.push((x, y));
                for c in 0..3 {
                    inside_sum[c] += vals[idx(x, y)][c];
                }
            } else if neighbours(x, y).iter().any(|&(nx, ny)| region.get(nx, ny)) {
                ring_count += 1;
                for c in 0..3 {
                    ring[c] += vals[idx(x, y)][c];
                }
            }
        }
    }
    if targets.is_empty() {
        return source.clone();
    }
    let init = if ring_count > 0 {
        ring.map(|v| v / ring_count as f64)
    } else {
        inside_sum.map(|v| v / targets.len() as f64)
    };
    for &(x, y) in &targets {
        vals[idx(x, y)] = init;
    }

    let mut next = vals.clone();
    for _ in 0..INPAINT_MAX_ITERS {
        let mut change: f64 = 0.0;
        for &(x, y) in &targets {
            let nb = neighbours(x, y);
            let mut acc = [0.0; 3];
            for &(nx, ny) in &nb {
                for c in 0..3 {
                    acc[c] += vals[idx(nx, ny)][c];
                }
            }
            let avg = acc.map(|v| v / nb.len() as f64);
            for c in 0..3 {
                change = change.max((avg[c] - vals[idx(x, y)][c]).abs());
            }
            next[idx(x, y)] = avg;
        }
        std::mem::swap(&mut vals, &mut next);
        if change < INPAINT_TOL {
            break;
        }
    }

    let mut out = source.clone();
    for &(x, y) in &targets {
        out.put_pixel(x, y, image::Rgb(vals[idx(x, y)].map(|v| v.round().clamp(0.0, 255.0) as u8)));
    }
    out
}

/// Random rectangle or star-shaped polygon whose bounding box spans
/// `side_frac` of each image dimension.
pub fn random_region(rng: &mut impl Rng, width: u32, height: u32, side_frac: (f64, f64)) -> Region {
    let bw = ((rng.random_range(side_frac.0..=side_frac.1) * f64::from(width)).round() as u32).clamp(4, width);
    let bh = ((rng.random_range(side_frac.0..=side_frac.1) * f64::from(height)).round() as u32).clamp(4, height);
    let x = rng.random_range(0..=width - bw);
    let y = rng.random_range(0..=height - bh);
    if rng.random_bool(0.5) {
        return Region::Rect { x, y, width: bw, height: bh };
    }
    let (cx, cy) = (f64::from(x) + f64::from(bw) / 2.0, f64::from(y) + f64::from(bh) / 2.0);
    let (rx, ry) = (f64::from(bw) / 2.0, f64::from(bh) / 2.0);
    let n = rng.random_range(5..=9);
    let offset = rng.random_range(0.0..std::f64::consts::TAU);
    let pts = (0..n)
        .map(|i| {
            let a = offset + std::f64::consts::TAU * i as f64 / n as f64;
            let r = rng.random_range(0.65..1.0);
            (cx + rx * r * a.cos(), cy + ry * r * a.sin())
        })
        .collect();
    Region::Polygon(pts)
}
