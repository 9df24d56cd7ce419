//! Manipulation-edge labels at stride 4.

use super::Mask;

/// Reduction between the pixel mask and the edge label.
pub const EDGE_POOL: u32 = 4;

/// 4× max-pool followed by a 3×3 morphological gradient
/// (dilation minus erosion). Pixels outside the frame count as background
/// for both operators, so a full-frame mask yields a one-pixel border.
pub fn edge_label_from_mask(mask: &Mask) -> Mask {
    let pooled = max_pool(mask, EDGE_POOL);
    let (w, h) = pooled.dimensions();
    Mask::from_fn(w, h, |x, y| {
        let mut any = false;
        let mut all = true;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let inside = nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64;
                let on = inside && pooled.get(nx as u32, ny as u32);
                any |= on;
                all &= on;
            }
        }
        any && !all
    })
}

/// Max-pool with a square window; partial windows at the far edges are kept.
pub fn max_pool(mask: &Mask, factor: u32) -> Mask {
    let (w, h) = mask.dimensions();
    let (pw, ph) = (w.div_ceil(factor), h.div_ceil(factor));
    Mask::from_fn(pw, ph, |px, py| {
        let ys = py * factor..((py + 1) * factor).min(h);
        ys.into_iter()
            .any(|y| (px * factor..((px + 1) * factor).min(w)).any(|x| mask.get(x, y)))
    })
}
