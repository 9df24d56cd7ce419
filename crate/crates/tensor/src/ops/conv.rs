use crate::gemm::{gemm, Mat};
use crate::{Tensor, Var};

/// Geometry of a 2-D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dOpts {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis; panics when the kernel does not fit.
    pub fn output_len(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        assert!(padded >= span, "kernel span {span} exceeds padded input {padded}");
        (padded - span) / self.stride + 1
    }
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOpts,
}

impl Geom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    fn src_index(&self, out: usize, k: usize) -> Option<usize> {
        let pos = (out * self.opts.stride + k * self.opts.dilation) as isize
            - self.opts.padding as isize;
        (pos >= 0).then_some(pos as usize)
    }
}

fn im2col(x: &[f64], g: &Geom, cols: &mut [f64]) {
    let n_cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match g.src_index(oy, ki).filter(|&iy| iy < g.h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.src_index(ox, kj) {
                                    Some(ix) if ix < g.w => src[ix],
                                    _ => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geom, dx: &mut [f64]) {
    let n_cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.ho {
                    let Some(iy) = g.src_index(oy, ki).filter(|&iy| iy < g.h) else {
                        continue;
                    };
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.src_index(ox, kj).filter(|&ix| ix < g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Plain (non-differentiable) convolution, `x: [n, c, h, w]`, `w: [o, c, kh, kw]`.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, opts: Conv2dOpts) -> Tensor {
    let [n, c, h, w] = x.dims4();
    let [o, wc, kh, kw] = weight.dims4();
    assert_eq!(c, wc, "conv2d: input has {c} channels, kernel expects {wc}");
    if let Some(b) = bias {
        assert_eq!(b.len(), o, "conv2d: bias length mismatch");
    }
    let g = Geom {
        c,
        h,
        w,
        kh,
        kw,
        ho: opts.output_len(h, kh),
        wo: opts.output_len(w, kw),
        opts,
    };
    let mut out = Tensor::zeros(&[n, o, g.ho, g.wo]);
    let wmat = Mat::new(weight.data(), o, g.col_rows());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.col_rows() * g.col_cols()]
    };
    for b in 0..n {
        let xb = x.outer(b);
        let colmat = if g.is_pointwise() {
            Mat::new(xb, g.col_rows(), g.col_cols())
        } else {
            im2col(xb, &g, &mut cols);
            Mat::new(&cols, g.col_rows(), g.col_cols())
        };
        let ob = out.outer_mut(b);
        gemm(wmat, colmat, ob, 0.0);
        if let Some(bias) = bias {
            for (row, &bv) in ob.chunks_mut(g.col_cols()).zip(bias.data()) {
                for v in row {
                    *v += bv;
                }
            }
        }
    }
    out
}

impl<'t> Var<'t> {
    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, opts: Conv2dOpts) -> Var<'t> {
        let (x, wv) = (self.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let out = conv2d_forward(&x, &wv, bv.as_deref(), opts);

        let [n, c, h, w] = x.dims4();
        let [o, _, kh, kw] = wv.dims4();
        let [_, _, ho, wo] = out.dims4();
        let g = Geom {
            c,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            opts,
        };
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();

        self.tape().op(out, &parents, move |grad, needs| {
            let (need_x, need_w) = (needs[0], needs[1]);
            let need_b = has_bias && needs[2];
            let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
            let mut dw = need_w.then(|| Tensor::zeros(wv.shape()));
            let mut db = need_b.then(|| Tensor::zeros(&[o]));
            let wmat = Mat::new(wv.data(), o, g.col_rows());
            let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { g.col_rows() * g.col_cols() }];
            let mut dcols = vec![0.0; if need_x { g.col_rows() * g.col_cols() } else { 0 }];

            for b in 0..n {
                let gb = Mat::new(grad.outer(b), o, g.col_cols());
                if let Some(dw) = dw.as_mut() {
                    let xb = x.outer(b);
                    let colmat = if g.is_pointwise() {
                        Mat::new(xb, g.col_rows(), g.col_cols())
                    } else {
                        im2col(xb, &g, &mut cols);
                        Mat::new(&cols, g.col_rows(), g.col_cols())
                    };
                    gemm(gb, colmat.t(), dw.data_mut(), 1.0);
                }
                if let Some(db) = db.as_mut() {
                    for (acc, row) in db.data_mut().iter_mut().zip(gb.data.chunks(g.col_cols())) {
                        *acc += row.iter().sum::<f64>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    if g.is_pointwise() {
                        gemm(wmat.t(), gb, dx.outer_mut(b), 0.0);
                    } else {
                        gemm(wmat.t(), gb, &mut dcols, 0.0);
                        col2im(&dcols, &g, dx.outer_mut(b));
                    }
                }
            }
            let mut result = vec![dx, dw];
            if has_bias {
                result.push(db);
            }
            result
        })
    }

    /// Pads the two spatial axes by repeating edge values.
    pub fn pad_replicate(self, pad: usize) -> Var<'t> {
        let x = self.value();
        let out = pad_replicate(&x, pad);
        let [n, c, h, w] = x.dims4();
        self.tape().op(out, &[self], move |grad, _| {
            let (hp, wp) = (h + 2 * pad, w + 2 * pad);
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            let d = dx.data_mut();
            let gd = grad.data();
            for p in 0..n * c {
                for y in 0..hp {
                    let sy = y.saturating_sub(pad).min(h - 1);
                    for xx in 0..wp {
                        let sx = xx.saturating_sub(pad).min(w - 1);
                        d[p * h * w + sy * w + sx] += gd[p * hp * wp + y * wp + xx];
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}

pub fn pad_replicate(x: &Tensor, pad: usize) -> Tensor {
    let [n, c, h, w] = x.dims4();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, hp, wp]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..hp {
            let sy = y.saturating_sub(pad).min(h - 1);
            for xx in 0..wp {
                let sx = xx.saturating_sub(pad).min(w - 1);
                dst[p * hp * wp + y * wp + xx] = src[p * h * w + sy * w + sx];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window reference.
    fn naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, o: Conv2dOpts) -> Tensor {
        let [n, c, h, wd] = x.dims4();
        let [oc, _, kh, kw] = w.dims4();
        let ho = o.output_len(h, kh);
        let wo = o.output_len(wd, kw);
        let mut out = Tensor::zeros(&[n, oc, ho, wo]);
        for bi in 0..n {
            for f in 0..oc {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[f]);
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * o.stride + ki * o.dilation) as isize - o.padding as isize;
                                    let ix = (ox * o.stride + kj * o.dilation) as isize - o.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((f * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((bi * oc + f) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: f64) -> Tensor {
        Tensor::from_fn(shape, |i| ((i as f64 + seed) * 0.731).sin())
    }

    #[test]
    fn matches_naive_for_strides_padding_dilation() {
        let x = pseudo(&[2, 3, 9, 8], 0.3);
        let w = pseudo(&[4, 3, 3, 3], 1.7);
        let b = pseudo(&[4], 2.9);
        for opts in [
            Conv2dOpts::new(1, 1, 1),
            Conv2dOpts::new(2, 1, 1),
            Conv2dOpts::new(1, 2, 2),
            Conv2dOpts::new(3, 0, 1),
        ] {
            let got = conv2d_forward(&x, &w, Some(&b), opts);
            let want = naive(&x, &w, Some(&b), opts);
            assert!(got.max_abs_diff(&want) < 1e-12, "{opts:?}");
        }
        let w1 = pseudo(&[5, 3, 1, 1], 0.1);
        let got = conv2d_forward(&x, &w1, None, Conv2dOpts::default());
        assert!(got.max_abs_diff(&naive(&x, &w1, None, Conv2dOpts::default())) < 1e-12);
    }

    #[test]
    fn replicate_padding_repeats_edges() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let p = pad_replicate(&x, 1);
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            p.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }
}
