//! Loop-based reference implementations shared by the integration tests.
#![allow(dead_code)]

use mvss_tensor::Tensor;

pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Tensor {
    let [n, ci, h, wd] = x.dims4();
    let [co, _, kh, kw] = w.dims4();
    let oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                    for i in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let sy = (y * stride + u * dil) as isize - pad as isize;
                                let sx = (xx * stride + v * dil) as isize - pad as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * ci + i) * kh + u) * kw + v]
                                    * x.data()[((b * ci + i) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, co, oh, ow], out)
}

/// Replicate-padded stride-1 convolution.
pub fn conv2d_replicate(x: &Tensor, w: &Tensor, pad: usize) -> Tensor {
    let [n, ci, h, wd] = x.dims4();
    let [co, _, kh, kw] = w.dims4();
    let mut out = vec![0.0; n * co * h * wd];
    for b in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let sy = (y as isize + u as isize - pad as isize).clamp(0, h as isize - 1) as usize;
                                let sx = (xx as isize + v as isize - pad as isize).clamp(0, wd as isize - 1) as usize;
                                acc += w.data()[((o * ci + i) * kh + u) * kw + v] * x.data()[((b * ci + i) * h + sy) * wd + sx];
                            }
                        }
                    }
                    out[((b * co + o) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, co, h, wd], out)
}

pub fn group_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Tensor {
    let [n, c, h, w] = x.dims4();
    let per = c / groups;
    let mut out = x.data().to_vec();
    for b in 0..n {
        for g in 0..groups {
            let mut vals = Vec::new();
            for ch in g * per..(g + 1) * per {
                for k in 0..h * w {
                    vals.push(x.data()[(b * c + ch) * h * w + k]);
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            for ch in g * per..(g + 1) * per {
                for k in 0..h * w {
                    let i = (b * c + ch) * h * w + k;
                    out[i] = (x.data()[i] - mean) / (var + eps).sqrt() * gamma.data()[ch] + beta.data()[ch];
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x + y)
}

/// Half-pixel-centre bilinear resampling with edge clamping.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.dims4();
    let src = |o: usize, out_len: usize, in_len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        for y in 0..oh {
            let (y0, y1, ly) = src(y, oh, h);
            for xx in 0..ow {
                let (x0, x1, lx) = src(xx, ow, w);
                let at = |yy: usize, xs: usize| x.data()[p * h * w + yy * w + xs];
                let top = at(y0, x0) * (1.0 - lx) + at(y0, x1) * lx;
                let bottom = at(y1, x0) * (1.0 - lx) + at(y1, x1) * lx;
                out[p * oh * ow + y * ow + xx] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn sobel(x: &Tensor, eps: f64) -> Tensor {
    let gx_k = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let gy_k = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let [n, c, h, w] = x.dims4();
    let mut out = vec![0.0; x.len()];
    for p in 0..n * c {
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let (mut gx, mut gy) = (0.0, 0.0);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (xx + dx).clamp(0, w as isize - 1) as usize;
                        let v = x.data()[p * h * w + sy * w + sx];
                        gx += gx_k[(dy + 1) as usize][(dx + 1) as usize] * v;
                        gy += gy_k[(dy + 1) as usize][(dx + 1) as usize] * v;
                    }
                }
                out[p * h * w + y as usize * w + xx as usize] = (gx * gx + gy * gy + eps).sqrt();
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Deterministic pseudo-random tensor in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}
