use crate::{Tensor, Var};

/// Source taps for one output coordinate: `(low, high, weight_of_high)`.
type Tap = (usize, usize, f64);

/// Half-pixel-centre sampling (`align_corners = false`), clamped at the edges.
fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of the two trailing axes of an NCHW tensor.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.dims4();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let (ty, tx) = (taps(h, out_h), taps(w, out_w));
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        let oplane = &mut dst[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bottom = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                oplane[oy * out_w + ox] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    out
}

fn resize_bilinear_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, out_h, out_w] = grad.dims4();
    let (ty, tx) = (taps(h, out_h), taps(w, out_w));
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let gd = grad.data();
    let dd = dx.data_mut();
    for p in 0..n * c {
        let gplane = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
        let plane = &mut dd[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = gplane[oy * out_w + ox];
                plane[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                plane[y0 * w + x1] += g * (1.0 - ly) * lx;
                plane[y1 * w + x0] += g * ly * (1.0 - lx);
                plane[y1 * w + x1] += g * ly * lx;
            }
        }
    }
    dx
}

impl<'t> Var<'t> {
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Var<'t> {
        let x = self.value();
        let [_, _, h, w] = x.dims4();
        if (h, w) == (out_h, out_w) {
            return self;
        }
        let out = resize_bilinear(&x, out_h, out_w);
        self.tape().op(out, &[self], move |grad, _| {
            vec![Some(resize_bilinear_backward(grad, h, w))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_stays_constant() {
        let x = Tensor::full(&[1, 2, 3, 5], 0.7);
        let y = resize_bilinear(&x, 12, 20);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_by_two_matches_half_pixel_convention() {
        // 1-D ramp [0, 1] upsampled to 4: taps at -0.25, 0.25, 0.75, 1.25
        let x = Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]);
        let y = resize_bilinear(&x, 1, 4);
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| (i as f64 * 0.9).sin());
        let g = Tensor::from_fn(&[1, 1, 7, 5], |i| (i as f64 * 0.4).cos());
        let fx = resize_bilinear(&x, 7, 5);
        let bg = resize_bilinear_backward(&g, 3, 4);
        let lhs: f64 = fx.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(bg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
